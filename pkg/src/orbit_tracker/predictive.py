"""Hierarchical predictive loop over a subgroup flag.

Each level holds a hypothesis ``delta`` built only from the directions it
owns.  A cycle walks the levels bottom-up:

    fit -> realize -> canonicalize -> coarse-grain -> pass up

Level k is linearized at its full top-down prediction
``(delta_k delta_{k+1} ... delta_L) . template_k`` so that an in-group scene
is an exact fixed point of the loop; the message handed upward is the
residual in level k's own frame.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .actions import Displacement, Observation, act, velocity_matrix
from .errors import ConfigError, DimError, LogBranchError, OrbitTrackerError, SingularFit
from .hierarchy import (
    Flag,
    PoolingSpec,
    ProjectorPair,
    coarse_grain,
    pool_observation,
    projector,
)
from .lie import (
    AlgebraVector,
    GroupElement,
    adjoint,
    compose,
    exp_map,
    inverse,
    log_map,
)

DEFAULT_LAMBDA = 1e-6
DEFAULT_THRESHOLD = 1e-2
DEFAULT_PATIENCE = 10
MESSAGE_MODES = ("observation", "algebra")


@dataclass(frozen=True, eq=False)
class LevelState:
    k: int
    delta: GroupElement
    template: Observation
    projectors: ProjectorPair
    fit_indices: tuple
    tikhonov_lambda: float = DEFAULT_LAMBDA
    pooling: PoolingSpec | None = None

    @property
    def basis(self):
        return self.delta.basis


@dataclass(frozen=True, eq=False)
class Message:
    payload: Displacement
    source: int
    algebra_payload: np.ndarray | None = None


@dataclass
class LevelDiagnostics:
    k: int
    eta_norm: float
    r_norm: float
    realized_norm: float
    forwarded_norm: float
    message_norm: float
    reset: bool = False


@dataclass
class CycleDiagnostics:
    cycle: int
    levels: list
    top_residual: float
    mismatch_flag: bool
    threshold: float
    aborted: str | None = None

    def rows(self):
        """CSV rows: cycle, k, eta_norm, r_norm, realized_norm, forwarded_norm, top_flag."""
        return [
            (self.cycle, lv.k, lv.eta_norm, lv.r_norm, lv.realized_norm, lv.forwarded_norm,
             int(self.mismatch_flag))
            for lv in self.levels
        ]


def predict(level: LevelState, context: GroupElement | None = None) -> Observation:
    """delta_k . template_k, optionally composed with a top-down context."""
    g = level.delta if context is None else compose(level.delta, context)
    return act(g, level.template)


def fit_residual(level: LevelState, datum: Observation,
                 context: GroupElement | None = None) -> AlgebraVector:
    """Tikhonov least-squares coefficients of the residual on induced velocities.

    Minimizes |datum - prediction - V eta|^2 + lambda |eta|^2 over the level's
    permitted generators; other coefficients are zero.
    """
    pred = predict(level, context)
    if datum.points.shape != pred.points.shape:
        raise DimError(f"datum shape {datum.points.shape} does not match level {level.k} "
                       f"resolution {pred.points.shape}")
    resid = (datum - pred).flat
    idx = list(level.fit_indices)
    basis = level.basis
    eta = np.zeros(basis.dim)
    if not idx:
        return AlgebraVector(eta, basis)
    v = velocity_matrix(basis, pred, idx)
    lam = level.tikhonov_lambda
    if lam == 0.0:
        if np.linalg.matrix_rank(v) < len(idx):
            raise SingularFit(
                f"level {level.k}: velocity design is rank deficient; use tikhonov_lambda > 0"
            )
        coef = np.linalg.lstsq(v, resid, rcond=None)[0]
    else:
        a = np.vstack([v, np.sqrt(lam) * np.eye(len(idx))])
        b = np.concatenate([resid, np.zeros(len(idx))])
        coef = np.linalg.lstsq(a, b, rcond=None)[0]
    eta[idx] = coef
    return AlgebraVector(eta, basis)


def realize_update(level: LevelState, eta: AlgebraVector) -> LevelState:
    """delta <- delta exp(P eta); raises LogBranchError if delta leaves the chart."""
    step = AlgebraVector(level.projectors.P @ eta.coeffs, level.basis)
    if not np.any(step.coeffs):
        return level
    new = compose(level.delta, exp_map(step))
    log_map(new)  # branch guard
    return replace(level, delta=new)


def canonicalize(level: LevelState, datum: Observation,
                 context: GroupElement | None = None) -> Displacement:
    """Residual with the explained frame removed: delta^-1 . datum - template."""
    g = level.delta if context is None else compose(level.delta, context)
    return act(inverse(g), datum) - level.template


def emit_message(level: LevelState, r: Displacement, eta: AlgebraVector | None = None,
                 algebra: bool = False) -> Message:
    if level.pooling is None:
        raise ConfigError(f"level {level.k} has no pooling to a coarser level")
    payload = coarse_grain(level.pooling, r)
    alg = None
    if algebra:
        if eta is None:
            raise ValueError("algebra messages need the fitted eta")
        q_eta = level.projectors.Q @ eta.coeffs
        alg = q_eta if level.delta.is_identity() else adjoint(inverse(level.delta)) @ q_eta
    return Message(payload, level.k, alg)


class PredictiveStack:
    """Levels 1..L over a flag plus the mismatch bookkeeping."""

    def __init__(self, flag: Flag, levels, semantics="coset", message_mode="observation",
                 threshold=DEFAULT_THRESHOLD, patience=DEFAULT_PATIENCE):
        if message_mode not in MESSAGE_MODES:
            raise ConfigError(f"message_mode must be one of {MESSAGE_MODES}")
        if len(levels) != flag.n_levels:
            raise ConfigError(f"{len(levels)} levels for a {flag.n_levels}-level flag")
        for k, lv in enumerate(levels, start=1):
            if lv.k != k:
                raise ConfigError("levels must be numbered 1..L in order")
            if k < len(levels):
                if lv.pooling is None or lv.pooling.n_blocks != levels[k].template.n_points:
                    raise ConfigError(f"pooling of level {k} does not produce level {k + 1}'s size")
        self.flag = flag
        self.levels = list(levels)
        self.semantics = semantics
        self.message_mode = message_mode
        self.threshold = float(threshold)
        self.patience = int(patience)
        self.cycle = 0
        self.over_count = 0
        self.reset_count = 0

    @property
    def n_levels(self):
        return len(self.levels)

    def contexts(self):
        """Top-down context for every level: delta_{k+1} ... delta_L."""
        basis = self.flag.basis
        out = [None] * self.n_levels
        acc = GroupElement.identity(basis)
        for k in range(self.n_levels - 1, -1, -1):
            out[k] = acc
            acc = compose(self.levels[k].delta, acc)
        return out

    def hypothesis(self):
        """Composite delta_1 delta_2 ... delta_L."""
        g = GroupElement.identity(self.flag.basis)
        for lv in self.levels:
            g = compose(g, lv.delta)
        return g


def build_stack(flag: Flag, template: Observation, poolings=None, lambdas=None,
                semantics="coset", message_mode="observation",
                threshold=DEFAULT_THRESHOLD, patience=DEFAULT_PATIENCE) -> PredictiveStack:
    """Stack with identity hypotheses; level k+1's template is the pooled template of level k."""
    n = flag.n_levels
    if poolings is None:
        poolings = [PoolingSpec.singletons(template.n_points) for _ in range(n - 1)]
    poolings = list(poolings)
    if len(poolings) != n - 1:
        raise ConfigError(f"need {n - 1} pooling specs for {n} levels, got {len(poolings)}")
    if lambdas is None:
        lambdas = [DEFAULT_LAMBDA] * n
    elif np.isscalar(lambdas):
        lambdas = [float(lambdas)] * n
    if len(lambdas) != n or any(lam < 0 for lam in lambdas):
        raise ConfigError("need one non-negative lambda per level")
    levels = []
    tpl = template
    for k in range(1, n + 1):
        fit_idx = flag.level_sets[k - 1]
        pool = poolings[k - 1] if k < n else None
        levels.append(LevelState(
            k=k,
            delta=GroupElement.identity(flag.basis),
            template=tpl,
            projectors=projector(flag, k, semantics),
            fit_indices=tuple(fit_idx),
            tikhonov_lambda=float(lambdas[k - 1]),
            pooling=pool,
        ))
        if pool is not None:
            tpl = pool_observation(pool, tpl)
    return PredictiveStack(flag, levels, semantics, message_mode, threshold, patience)


def run_cycle(stack: PredictiveStack, datum: Observation) -> CycleDiagnostics:
    """One bottom-up pass; updates the stack's hypotheses in place."""
    stack.cycle += 1
    ctx = stack.contexts()
    diags = []
    aborted = None
    d_k = datum
    algebra_in = None
    top = float("nan")
    for i, level in enumerate(stack.levels):
        k = level.k
        try:
            if algebra_in is not None:
                eta = AlgebraVector(algebra_in, level.basis)
            else:
                eta = fit_residual(level, d_k, ctx[i])
            xi = eta if level.delta.is_identity() else AlgebraVector(
                adjoint(inverse(level.delta)) @ eta.coeffs, level.basis)
            realized, forwarded = level.projectors.split(xi.coeffs)
            reset = False
            try:
                level = realize_update(level, xi)
            except LogBranchError:
                level = replace(level, delta=GroupElement.identity(level.basis))
                stack.reset_count += 1
                reset = True
            stack.levels[i] = level
            full = canonicalize(level, d_k, ctx[i])
            own = canonicalize(level, d_k)
            msg_norm = 0.0
            if k < stack.n_levels:
                msg = emit_message(level, own, eta, algebra=stack.message_mode == "algebra")
                msg_norm = msg.payload.norm()
                d_k = stack.levels[i + 1].template + msg.payload
                if stack.message_mode == "algebra":
                    algebra_in = forwarded
            top = full.norm()
            diags.append(LevelDiagnostics(k, eta.norm(), full.norm(), float(np.linalg.norm(realized)),
                                          float(np.linalg.norm(forwarded)), msg_norm, reset))
        except OrbitTrackerError as exc:  # keep partial diagnostics and record why
            aborted = f"level {k}: {type(exc).__name__}: {exc}"
            break
    if aborted is None and top > stack.threshold:
        stack.over_count += 1
    elif aborted is None:
        stack.over_count = 0
    flag = stack.over_count >= stack.patience
    return CycleDiagnostics(stack.cycle, diags, top, flag, stack.threshold, aborted)


def run_cycles(stack: PredictiveStack, datum: Observation, n_cycles: int):
    return [run_cycle(stack, datum) for _ in range(n_cycles)]


def _selection_pair(basis, idx):
    """Projector pair that realizes exactly the generators in ``idx``."""
    p = np.zeros((basis.dim, basis.dim))
    p[list(idx), list(idx)] = 1.0
    return ProjectorPair(1, p, np.eye(basis.dim) - p, "coset", tuple(idx))


def fit_group(basis, reference: Observation, target: Observation, indices=None,
              tikhonov_lambda=1e-12, max_iter=50, tol=1e-13, start=None) -> GroupElement:
    """Gauss-Newton estimate of g with g . reference ~ target.

    Iterates :func:`fit_residual` on a single level that owns every
    generator in ``indices``, applying each step on the left of the estimate.
    """
    idx = tuple(range(basis.dim)) if indices is None else tuple(basis.index(a) for a in indices)
    pair = _selection_pair(basis, idx)
    g = GroupElement.identity(basis) if start is None else start
    level = LevelState(1, g, reference, pair, idx, tikhonov_lambda)
    for _ in range(max_iter):
        eta = fit_residual(level, target)
        if not np.any(eta.coeffs):
            break
        level = replace(level, delta=compose(exp_map(eta), level.delta))
        if eta.norm() <= tol:
            break
    return level.delta


def fit_error_slope(basis, template: Observation, direction, norms=(0.2, 0.1, 0.05),
                    tikhonov_lambda=1e-12):
    """Log-log slope of the one-step fit error against |eta|.

    Each target is exp(eta) . template with eta along ``direction``; the fit
    is a single linearized solve at the identity, so the error should scale
    like |eta|^2.  Returns (slope, errors).
    """
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    idx = tuple(range(basis.dim))
    pair = _selection_pair(basis, idx)
    level = LevelState(1, GroupElement.identity(basis), template, pair, idx, tikhonov_lambda)
    errs = []
    for s in norms:
        eta = AlgebraVector(s * u, basis)
        est = fit_residual(level, act(exp_map(eta), template))
        errs.append(float(np.linalg.norm(est.coeffs - eta.coeffs)))
    slope = float(np.polyfit(np.log(norms), np.log(errs), 1)[0])
    return slope, errs
