"""Equivariant world-tracking dynamics with Lyapunov feedback.

The agent is P leaky populations, each a copy of the observation space:

    x_i' = -alpha x_i + sum_j W_ij x_j + b_i I            (i > 0)
    x_0' = (same) - kappa (x_0 - I)

Population 0 is the readout p(x).  With scalar couplings the field commutes
with every affine action iff each row satisfies -alpha + sum_j W_ij + b_i = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .actions import Displacement, Observation, act, induced_velocity
from .errors import ConfigError, DimError, DomainError, NumericalBlowup
from .generative import StreamConfig, sample
from .lie import GeneratorBasis, GroupElement, log_map

TRANSIENT_FRACTION = 0.8


@dataclass(frozen=True, eq=False)
class TrackerConfig:
    """Weights of the population agent.

    ``b`` is projected onto the equivariance constraint unless
    ``enforce_row_sum`` is False (used to build deliberately broken agents).
    """

    alpha: float
    W: np.ndarray
    kappa: float
    basis: GeneratorBasis
    dt: float = 0.01
    b: np.ndarray | None = None
    enforce_row_sum: bool = True

    def __post_init__(self):
        w = np.array(self.W, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
            raise ConfigError(f"W must be a square matrix, got shape {w.shape}")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if not self.kappa >= 0:
            raise ConfigError("kappa must be non-negative")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        n = w.shape[0]
        if self.enforce_row_sum or self.b is None:
            b = self.alpha - w.sum(axis=1)
        else:
            b = np.array(self.b, dtype=float).reshape(-1)
            if b.shape != (n,):
                raise ConfigError(f"b must have {n} entries")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ConfigError("weights must be finite")
        eig = np.linalg.eigvals(w - self.alpha * np.eye(n))
        if eig.real.max() >= 0:
            raise ConfigError(
                f"W - alpha I is not Hurwitz (max eigenvalue real part {eig.real.max():.4g})"
            )
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", w)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n_pop(self):
        return self.W.shape[0]

    def row_sum_defect(self):
        return -self.alpha + self.W.sum(axis=1) + self.b

    def system_matrix(self):
        """Population coupling including the feedback on the readout slot."""
        a = self.W - self.alpha * np.eye(self.n_pop)
        a[0, 0] -= self.kappa
        return a

    def input_weights(self):
        c = self.b.copy()
        c[0] += self.kappa
        return c

    def gain(self):
        """K as a population-space matrix: injects -kappa E into the readout."""
        k = np.zeros((self.n_pop, 1))
        k[0, 0] = -self.kappa
        return k


@dataclass(frozen=True, eq=False)
class AgentState:
    populations: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        p = np.array(self.populations, dtype=float)
        if p.ndim != 2:
            raise DimError("populations must be a (P, X) array")
        p.setflags(write=False)
        object.__setattr__(self, "populations", p)

    @classmethod
    def uniform(cls, n_pop, obs: Observation, t=0.0):
        return cls(np.tile(obs.flat, (n_pop, 1)), t)

    @property
    def readout(self):
        return self.populations[0]

    def readout_obs(self, d):
        return Observation.from_flat(self.readout, d)


def _flat_input(I):
    return I.flat if isinstance(I, Observation) else np.asarray(I, dtype=float).reshape(-1)


def _check(cfg, x, inp):
    if x.populations.shape[0] != cfg.n_pop:
        raise DimError(f"state has {x.populations.shape[0]} populations, config {cfg.n_pop}")
    if x.populations.shape[1] != inp.size:
        raise DimError(f"state population size {x.populations.shape[1]} != input size {inp.size}")


def vector_field(cfg: TrackerConfig, x: AgentState, I) -> np.ndarray:
    """State velocity (P, X)."""
    inp = _flat_input(I)
    _check(cfg, x, inp)
    pops = x.populations
    out = -cfg.alpha * pops + cfg.W @ pops + np.outer(cfg.b, inp)
    out[0] -= cfg.kappa * (pops[0] - inp)
    return out


def error_and_lyapunov(cfg: TrackerConfig, x: AgentState, I: Observation):
    """E = p(x) - I and V = |E|^2 / 2."""
    inp = _flat_input(I)
    _check(cfg, x, inp)
    e = x.readout - inp
    return Displacement.from_flat(e, I.d if isinstance(I, Observation) else 1), 0.5 * float(e @ e)


def step(cfg: TrackerConfig, x: AgentState, I) -> AgentState:
    """One classical RK4 step.

    ``I`` is either an Observation held over the step or a callable
    t -> Observation evaluated at t, t + dt/2 and t + dt.
    """
    dt = cfg.dt
    if callable(I):
        i0, ih, i1 = I(x.t), I(x.t + 0.5 * dt), I(x.t + dt)
    else:
        i0 = ih = i1 = I
    k1 = vector_field(cfg, x, i0)
    k2 = vector_field(cfg, AgentState(x.populations + 0.5 * dt * k1, x.t), ih)
    k3 = vector_field(cfg, AgentState(x.populations + 0.5 * dt * k2, x.t), ih)
    k4 = vector_field(cfg, AgentState(x.populations + dt * k3, x.t), i1)
    new = x.populations + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(new)):
        raise NumericalBlowup(
            f"non-finite state at t={x.t + dt:g}; reduce dt or check the spectral condition",
            step=1,
        )
    return AgentState(new, x.t + dt)


def stream_inputs(stream: StreamConfig, n_steps: int, dt: float, frame: GroupElement | None = None):
    """Flat inputs on the half-step grid t_j = j dt / 2, j = 0..2n."""
    if stream.mode == "static":
        obs = sample(stream, 0.0)[1]
        if frame is not None:
            obs = act(frame, obs)
        return np.tile(obs.flat, (2 * n_steps + 1, 1))
    rows = []
    for j in range(2 * n_steps + 1):
        obs = sample(stream, j * 0.5 * dt)[1]
        if frame is not None:
            obs = act(frame, obs)
        rows.append(obs.flat)
    return np.array(rows)


def integrate(cfg: TrackerConfig, x0: AgentState, inputs: np.ndarray, backend=None):
    """Run the kernel over precomputed half-step inputs; raises NumericalBlowup."""
    fn = kernels.integrate_linear if backend is None else kernels.backends()[backend]
    readout, v, e_norm, pdot, final, blow = fn(
        np.ascontiguousarray(x0.populations), cfg.system_matrix(), cfg.input_weights(), cfg.dt,
        np.ascontiguousarray(inputs),
    )
    if blow >= 0:
        raise NumericalBlowup(
            f"state became non-finite at step {blow}; reduce dt or check the spectral condition",
            step=int(blow),
        )
    n = (inputs.shape[0] - 1) // 2
    return readout, v, e_norm, pdot, AgentState(final, x0.t + n * cfg.dt)


def flow(cfg: TrackerConfig, x0: AgentState, stream: StreamConfig, T: float,
         frame: GroupElement | None = None) -> AgentState:
    """State at time T; ``frame`` left-multiplies every stream observation."""
    n = int(round(T / cfg.dt))
    if frame is not None:
        x0 = act_state(frame, x0)
    return integrate(cfg, x0, stream_inputs(stream, n, cfg.dt, frame))[4]


def _act_pop(g, flat):
    d = g.basis.ambient_dim
    pts = flat.reshape(-1, d)
    return (pts @ g.linear.T + g.translation).reshape(-1)


def act_state(g: GroupElement, x: AgentState) -> AgentState:
    """gamma . x: every population moves as a point cloud."""
    return AgentState(np.array([_act_pop(g, p) for p in x.populations]), x.t)


@dataclass
class EpisodeDiagnostics:
    t: np.ndarray
    V: np.ndarray
    E_norm: np.ndarray
    p_drift: np.ndarray
    theta_fit: np.ndarray | None
    input_rate: np.ndarray
    final_state: AgentState
    noether_drift: float
    theta_drift_rate: float | None
    leaf_bound: int
    window_start: int

    @property
    def n_samples(self):
        return self.t.shape[0]

    def steady_V(self):
        return float(np.mean(self.V[self.window_start:]))


def leaf_dimension_bound(X: int, Y: int, M: int) -> int:
    """Dimension bound M + X - Y of the drifting invariant leaf."""
    for name, val in (("X", X), ("Y", Y), ("M", M)):
        if int(val) != val or val < 0:
            raise DomainError(f"{name} must be a non-negative integer, got {val}")
    if Y > X:
        raise DomainError(f"readout dimension Y={Y} exceeds state dimension X={X}")
    return int(M + X - Y)


def drifting_parameters(stream: StreamConfig) -> int:
    if stream.mode == "static":
        return 0
    if stream.mode == "drift":
        return int(np.count_nonzero(stream.rate))
    return int(np.count_nonzero(stream.step_sigma))


def fit_readout_theta(basis, template, readouts, d, stride=1):
    """Group coordinates of each readout row relative to the template.

    ``stride`` may be an int or an explicit array of row indices.  Rows not
    fitted are NaN; consecutive fits warm start from the previous estimate.
    """
    from .predictive import fit_group

    n = readouts.shape[0]
    rows = np.arange(0, n, stride) if np.isscalar(stride) else np.asarray(stride, dtype=int)
    out = np.full((n, basis.dim), np.nan)
    g = None
    for s in rows:
        obs = Observation.from_flat(readouts[s], d)
        g = fit_group(basis, template, obs, start=g)
        out[s] = log_map(g).coeffs
    return out


def run_episode(cfg: TrackerConfig, stream: StreamConfig, T: float, x0: AgentState | None = None,
                fit_theta=True, theta_stride=1, backend=None) -> EpisodeDiagnostics:
    """Integrate the closed loop against a stream and collect diagnostics.

    Series have one row per recorded time, t = 0, dt, ..., T.  The Noether
    metrics use the final (1 - TRANSIENT_FRACTION) of the rows.
    """
    if not T > 0:
        raise DomainError("episode duration must be positive")
    if stream.basis.basis_id != cfg.basis.basis_id:
        raise ConfigError("tracker and stream act with different groups")
    n = int(round(T / cfg.dt))
    if n < 1:
        raise DomainError("episode shorter than one step")
    inputs = stream_inputs(stream, n, cfg.dt)
    if x0 is None:
        # every population starts on the reference scene
        x0 = AgentState.uniform(cfg.n_pop, stream.template)
    readout, v, e_norm, pdot, final = integrate(cfg, x0, inputs, backend)
    t = np.arange(n + 1) * cfg.dt
    # |dI/dt| by central differences on the half-step grid
    rate = np.empty(n + 1)
    rate[0] = np.linalg.norm(inputs[1] - inputs[0]) / (0.5 * cfg.dt)
    rate[1:] = np.linalg.norm(inputs[2::2] - inputs[1:-1:2], axis=1) / (0.5 * cfg.dt)
    start = min(n, int(np.floor(TRANSIENT_FRACTION * n)))
    d = stream.template.d
    theta = None
    theta_rate = None
    if fit_theta:
        theta = fit_readout_theta(cfg.basis, stream.template, readout, d, theta_stride)
        rows = np.arange(start, n + 1, theta_stride)
        rows = rows[~np.isnan(theta[rows, 0])]
        if rows.size >= 2:
            dth = np.linalg.norm(np.diff(theta[rows], axis=0), axis=1)
            theta_rate = float(np.max(dth / (np.diff(rows) * cfg.dt)))
    x_dim = cfg.n_pop * inputs.shape[1]
    bound = leaf_dimension_bound(x_dim, inputs.shape[1], drifting_parameters(stream))
    return EpisodeDiagnostics(
        t=t, V=v, E_norm=e_norm, p_drift=pdot, theta_fit=theta, input_rate=rate,
        final_state=final, noether_drift=float(np.max(pdot[start:])),
        theta_drift_rate=theta_rate, leaf_bound=bound, window_start=start,
    )


def check_commutation(cfg: TrackerConfig, basis: GeneratorBasis | None = None, n_points=5,
                      n_states=5, seed=0) -> np.ndarray:
    """Max defect of the infinitesimal commutation condition per generator.

    For generator T_a with linear block L_a the condition reads
    J_x F . V_a(x) + J_I F . V_a(I) = L_a F(x, I).
    """
    basis = cfg.basis if basis is None else basis
    d = basis.ambient_dim
    rng = np.random.default_rng(seed)
    jx = cfg.system_matrix()
    ji = cfg.input_weights()
    defects = np.zeros(basis.dim)
    for _ in range(n_states):
        pts = rng.standard_normal((cfg.n_pop, n_points, d))
        inp = Observation(rng.standard_normal((n_points, d)))
        x = AgentState(pts.reshape(cfg.n_pop, -1))
        f = vector_field(cfg, x, inp)
        for a in range(basis.dim):
            lin = basis.generators[a][:-1, :-1]
            vx = np.array([induced_velocity(basis, a, Observation(p)) for p in pts])
            vi = induced_velocity(basis, a, inp)
            lhs = jx @ vx + np.outer(ji, vi)
            rhs = (f.reshape(cfg.n_pop, n_points, d) @ lin.T).reshape(cfg.n_pop, -1)
            defects[a] = max(defects[a], float(np.abs(lhs - rhs).max()))
    return defects


def iss_experiment(cfg: TrackerConfig, stream: StreamConfig, T: float, backend=None):
    """Steady tracking error at drift rates s and s/2 plus fitted ISS constants.

    alpha_hat is the decay rate of V under the frozen stream (V' = -alpha |E|^2);
    beta_hat = alpha_hat * max |E|^2 / |I'|^2 over the steady windows, so that
    V_ss <= beta_hat |I'|^2 / alpha_hat holds for both rates.
    """
    if stream.mode != "drift":
        raise ConfigError("ISS scaling needs a drift stream")
    static = StreamConfig(stream.basis, stream.theta0, stream.template, mode="static",
                          factor_order=stream.factor_order)
    dec = run_episode(cfg, static, T, fit_theta=False, backend=backend)
    alive = np.nonzero(dec.V > 1e-200)[0]
    alive = alive[: max(2, alive.size // 4)]
    slopes = np.diff(np.log(dec.V[alive])) / cfg.dt
    alpha_hat = float(-0.5 * np.median(slopes))
    runs = []
    for scale in (1.0, 0.5):
        s = StreamConfig(stream.basis, stream.theta0, stream.template, mode="drift",
                         rate=stream.rate * scale, factor_order=stream.factor_order)
        runs.append(run_episode(cfg, s, T, fit_theta=False, backend=backend))
    ratios = []
    for ep in runs:
        w = slice(ep.window_start, None)
        ratios.append(float(np.max(ep.E_norm[w] ** 2 / np.maximum(ep.input_rate[w] ** 2, 1e-300))))
    beta_hat = alpha_hat * max(ratios)
    v_full, v_half = runs[0].steady_V(), runs[1].steady_V()
    return {
        "iss_alpha": alpha_hat,
        "iss_beta": beta_hat,
        "steady_V": [v_full, v_half],
        "ratio": v_full / v_half if v_half > 0 else float("inf"),
        "input_rate": [float(np.mean(r.input_rate[r.window_start:])) for r in runs],
    }
