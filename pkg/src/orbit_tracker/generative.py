"""Group-generated observation streams and product-of-exponentials chains."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .actions import Observation, act, algebra_velocity
from .errors import ConfigError, DimError, DomainError
from .lie import (
    AlgebraVector,
    GeneratorBasis,
    GroupElement,
    adjoint,
    compose,
    exp_map,
)

MODES = ("static", "drift", "random_walk")


@dataclass(frozen=True, eq=False)
class StreamConfig:
    """Parameter trajectory theta(t) plus the template cloud it moves.

    ``factor_order`` lists generator index groups; group 0 is applied to the
    template first and the last group is outermost.  ``walk_dt`` is the step
    of the random walk (one Gaussian increment per step).
    """

    basis: GeneratorBasis
    theta0: np.ndarray
    template: Observation
    mode: str = "static"
    rate: np.ndarray | None = None
    step_sigma: np.ndarray | None = None
    seed: int | None = None
    walk_dt: float = 0.01
    factor_order: tuple = field(default=None)

    def __post_init__(self):
        r = self.basis.dim
        theta0 = np.array(self.theta0.coeffs if isinstance(self.theta0, AlgebraVector) else self.theta0,
                          dtype=float).reshape(-1)
        if theta0.shape != (r,) or not np.all(np.isfinite(theta0)):
            raise ConfigError(f"theta0 must be {r} finite reals")
        object.__setattr__(self, "theta0", theta0)
        if self.mode not in MODES:
            raise ConfigError(f"unknown stream mode {self.mode!r}; expected one of {MODES}")
        if self.template.d != self.basis.ambient_dim:
            raise ConfigError("template dimension does not match the basis")
        for name in ("rate", "step_sigma"):
            val = getattr(self, name)
            if val is not None:
                val = np.array(val, dtype=float).reshape(-1)
                if val.shape != (r,) or not np.all(np.isfinite(val)):
                    raise ConfigError(f"{name} must be {r} finite reals")
                object.__setattr__(self, name, val)
        if self.mode == "drift" and self.rate is None:
            raise ConfigError("drift mode needs a rate vector")
        if self.mode == "random_walk":
            if self.step_sigma is None:
                raise ConfigError("random_walk mode needs step_sigma")
            if self.seed is None:
                raise ConfigError("random_walk mode needs a seed")
            if not self.walk_dt > 0:
                raise ConfigError("walk_dt must be positive")
        elif self.seed is not None:
            raise ConfigError("seed is only meaningful for random_walk streams")
        object.__setattr__(self, "factor_order", _check_factors(self.factor_order, r))

    @property
    def basis_id(self):
        return self.basis.basis_id


def _check_factors(order, r):
    if order is None:
        return (tuple(range(r)),)
    groups = tuple(tuple(int(a) for a in grp) for grp in order)
    seen = set()
    for grp in groups:
        if not grp:
            raise ConfigError("empty factor group")
        for a in grp:
            if not 0 <= a < r:
                raise ConfigError(f"factor index {a} out of range for r={r}")
            if a in seen:
                raise ConfigError(f"generator {a} appears in more than one factor group")
            seen.add(a)
    return groups


def gamma_of_theta(cfg: StreamConfig, theta) -> GroupElement:
    """Ordered product exp(theta|group_L) ... exp(theta|group_1)."""
    coeffs = theta.coeffs if isinstance(theta, AlgebraVector) else np.asarray(theta, dtype=float)
    basis = cfg.basis
    if len(cfg.factor_order) == 1 and len(cfg.factor_order[0]) == basis.dim:
        return exp_map(AlgebraVector(coeffs, basis))
    g = GroupElement.identity(basis)
    for grp in cfg.factor_order:
        part = np.zeros(basis.dim)
        idx = list(grp)
        part[idx] = coeffs[idx]
        g = compose(exp_map(AlgebraVector(part, basis)), g)
    return g


_WALK_CHUNK = 1024


@lru_cache(maxsize=64)
def _walk_positions(seed, r, n_rows):
    # one generator stream per seed; prefixes are stable as n_rows grows
    steps = np.random.default_rng(seed).standard_normal((n_rows, r))
    walk = np.cumsum(steps, axis=0)
    walk.setflags(write=False)
    return walk


def walk_step_index(cfg: StreamConfig, t: float) -> int:
    return int(math.floor(t / cfg.walk_dt + 1e-9))


def theta_at(cfg: StreamConfig, t: float) -> np.ndarray:
    if not t >= 0:
        raise DomainError(f"stream time must be non-negative, got {t}")
    if cfg.mode == "static":
        return cfg.theta0.copy()
    if cfg.mode == "drift":
        return cfg.theta0 + cfg.rate * t
    n = walk_step_index(cfg, t)
    if n == 0:
        return cfg.theta0.copy()
    rows = _WALK_CHUNK * (1 + (n - 1) // _WALK_CHUNK)
    pos = _walk_positions(int(cfg.seed), cfg.basis.dim, rows)[n - 1]
    return cfg.theta0 + cfg.step_sigma * pos


def sample(cfg: StreamConfig, t: float):
    """(theta(t), gamma(theta(t)) . template)."""
    theta = theta_at(cfg, t)
    g = gamma_of_theta(cfg, theta)
    return AlgebraVector(theta, cfg.basis), act(g, cfg.template)


# ---------------------------------------------------------------------------
# product of exponentials


@dataclass(frozen=True, eq=False)
class PoEChain:
    """Serial chain T(q) = exp(S_1 q_1) ... exp(S_n q_n) M.

    ``link_offsets[n]`` is the home frame of link n (optional); markers in
    ``link_templates[n]`` ride on that link, ``marker_template`` rides on the
    end frame.
    """

    twists: tuple
    home_pose: GroupElement
    marker_template: Observation
    link_offsets: tuple | None = None
    link_templates: tuple | None = None

    def __post_init__(self):
        if len(self.twists) < 1:
            raise ConfigError("a chain needs at least one joint")
        basis = self.home_pose.basis
        if basis.basis_id not in ("se2", "se3"):
            raise ConfigError("PoE chains use se2 or se3 twists")
        n_rot = 1 if basis.basis_id == "se2" else 3
        for s in self.twists:
            if s.basis.basis_id != basis.basis_id:
                raise ConfigError("twist basis differs from the home pose basis")
            w, v = s.coeffs[:n_rot], s.coeffs[n_rot:]
            wn = np.linalg.norm(w)
            if abs(wn - 1.0) > 1e-9 and not (wn == 0.0 and abs(np.linalg.norm(v) - 1.0) <= 1e-9):
                raise ConfigError(f"twist {s.coeffs} is not a unit screw axis")
        if self.link_offsets is not None and len(self.link_offsets) != len(self.twists):
            raise ConfigError("one link offset per joint")
        if self.link_templates is not None:
            if self.link_offsets is None or len(self.link_templates) != len(self.twists):
                raise ConfigError("link templates need one offset and one template per joint")

    @property
    def basis(self):
        return self.home_pose.basis

    @property
    def n_joints(self):
        return len(self.twists)


def _partial_products(chain, angles):
    out = []
    g = GroupElement.identity(chain.basis)
    for s, q in zip(chain.twists, angles):
        g = compose(g, exp_map(s * q))
        out.append(g)
    return out


def poe_forward(chain: PoEChain, joint_angles):
    """End frame and marker cloud (link markers in joint order, then end markers)."""
    q = np.asarray(joint_angles, dtype=float).reshape(-1)
    if q.shape[0] != chain.n_joints:
        raise DimError(f"{q.shape[0]} joint angles for a {chain.n_joints}-joint chain")
    partial = _partial_products(chain, q)
    end = compose(partial[-1], chain.home_pose)
    blocks = []
    if chain.link_templates is not None:
        for p, off, tpl in zip(partial, chain.link_offsets, chain.link_templates):
            blocks.append(act(compose(p, off), tpl).points)
    blocks.append(act(end, chain.marker_template).points)
    return end, Observation(np.vstack(blocks))


def poe_jacobian(chain: PoEChain, joint_angles) -> np.ndarray:
    """d markers / d q as an (X, n) matrix.

    Column n is the velocity field of the twist S_n transported by the
    partial product of the joints before it, evaluated at the markers it moves.
    """
    q = np.asarray(joint_angles, dtype=float).reshape(-1)
    if q.shape[0] != chain.n_joints:
        raise DimError(f"{q.shape[0]} joint angles for a {chain.n_joints}-joint chain")
    partial = _partial_products(chain, q)
    _, markers = poe_forward(chain, q)
    d = chain.basis.ambient_dim
    pts = markers.points
    owner = np.full(pts.shape[0], chain.n_joints)  # end markers follow every joint
    if chain.link_templates is not None:
        start = 0
        for n, tpl in enumerate(chain.link_templates):
            owner[start:start + tpl.n_points] = n + 1
            start += tpl.n_points
    jac = np.zeros((pts.size, chain.n_joints))
    ident = GroupElement.identity(chain.basis)
    for n, s in enumerate(chain.twists):
        before = partial[n - 1] if n > 0 else ident
        moved = AlgebraVector(adjoint(before) @ s.coeffs, chain.basis)
        vel = algebra_velocity(moved, markers).reshape(-1, d)
        vel[owner <= n] = 0.0
        jac[:, n] = vel.reshape(-1)
    return jac
