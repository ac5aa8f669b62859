"""Brute-force references for the test suite and ``check``.

Nothing here calls the exp/log, action, fit or integration code it is
meant to validate.  Matrix exponentials come from scipy (or an explicit
Taylor series), actions are written out on homogeneous coordinates and
the reference integrator has its own vector field.  Only plain data
(generator matrices, template points, stream parameters) is read from the
library objects.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.linalg import expm

from .errors import DomainError, GridBudgetError, NumericalBlowup

GRID_BUDGET = 10**6
MAX_GRID_DIMS = 3
REFERENCE_REFINE = 100


def _gens(basis):
    return np.array([np.asarray(g, dtype=float) for g in basis.generators])


def _resolve(basis, dims):
    out = []
    for a in dims:
        out.append(list(basis.names).index(a) if isinstance(a, str) else int(a))
    return out


def _apply(mat, pts):
    """Homogeneous action of one or a stack of matrices on an (N, d) array."""
    d = pts.shape[1]
    return pts @ np.swapaxes(mat[..., :d, :d], -1, -2) + mat[..., None, :d, d]


def expm_taylor_reference(a, terms=30):
    """exp(a) by a plain Taylor sum on a scaled copy, then repeated squaring."""
    a = np.asarray(a, dtype=float)
    norm = np.abs(a).sum(axis=0).max()
    s = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0 else 0
    b = a / 2.0**s
    total = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, terms):
        term = term @ b / k
        total = total + term
    for _ in range(s):
        total = total @ total
    return total


def exp_reference(basis, coeffs):
    return expm(np.tensordot(np.asarray(coeffs, dtype=float), _gens(basis), axes=1))


def adjoint_reference(basis, g_matrix):
    """Ad(g) columns from explicit conjugation g T_a g^-1 and a least-squares solve."""
    gens = _gens(basis)
    g = np.asarray(g_matrix, dtype=float)
    g_inv = np.linalg.inv(g)
    design = gens.reshape(len(gens), -1).T
    conj = np.array([g @ t @ g_inv for t in gens]).reshape(len(gens), -1).T
    return np.linalg.lstsq(design, conj, rcond=None)[0]


def commutator_reference(basis, a, b):
    """Coefficients of [A, B] for coefficient vectors a and b."""
    gens = _gens(basis)
    ma = np.tensordot(np.asarray(a, dtype=float), gens, axes=1)
    mb = np.tensordot(np.asarray(b, dtype=float), gens, axes=1)
    design = gens.reshape(len(gens), -1).T
    return np.linalg.lstsq(design, (ma @ mb - mb @ ma).reshape(-1), rcond=None)[0]


def grid_fit(basis, active_dims, target, reference, radius, step):
    """Exhaustive minimizer of |exp(eta) . reference - target| on a cubic grid.

    The grid is ``k * step`` for integer k with |k step| <= radius on each
    active dimension.  Ties go to the lexicographically smallest eta, which
    is the first minimum in row-major grid order.  Returns an AlgebraVector.
    """
    from .lie import AlgebraVector

    dims = _resolve(basis, active_dims)
    if len(dims) > MAX_GRID_DIMS:
        raise GridBudgetError(f"{len(dims)} active dimensions; at most {MAX_GRID_DIMS} allowed")
    if not (step > 0 and radius >= 0):
        raise DomainError("grid needs step > 0 and radius >= 0")
    half = int(math.floor(radius / step + 1e-9))
    axis = np.arange(-half, half + 1) * step
    n_nodes = axis.size ** len(dims)
    if n_nodes > GRID_BUDGET:
        raise GridBudgetError(f"grid of {n_nodes} nodes exceeds the budget of {GRID_BUDGET}")
    ref = np.asarray(reference.points, dtype=float)
    tgt = np.asarray(target.points, dtype=float)
    gens = _gens(basis)[dims]
    best_cost = np.inf
    best = None
    chunk = 4096
    nodes = itertools.product(axis, repeat=len(dims))
    while True:
        block = np.array(list(itertools.islice(nodes, chunk)))
        if block.size == 0:
            break
        mats = expm(np.tensordot(block, gens, axes=1))
        cost = ((_apply(mats, ref) - tgt) ** 2).sum(axis=(1, 2))
        i = int(np.argmin(cost))
        if cost[i] < best_cost:  # strict: earlier chunks win ties
            best_cost = cost[i]
            best = block[i]
    coeffs = np.zeros(basis.dim)
    coeffs[dims] = best
    return AlgebraVector(coeffs, basis)


def finite_diff_velocity(basis, a, obs, eps):
    """Central difference of the orbit through ``obs`` along generator a (flat)."""
    idx = _resolve(basis, [a])[0]
    gen = _gens(basis)[idx]
    pts = np.asarray(obs.points, dtype=float)
    plus = _apply(expm(eps * gen), pts)
    minus = _apply(expm(-eps * gen), pts)
    return ((plus - minus) / (2.0 * eps)).reshape(-1)


def stream_reference(stream, t):
    """I(t) as an (N, d) array with scipy exponentials of each factor."""
    if stream.mode == "static":
        theta = np.array(stream.theta0, dtype=float)
    elif stream.mode == "drift":
        theta = np.array(stream.theta0, dtype=float) + np.array(stream.rate, dtype=float) * t
    else:
        # the walk path is input data, not something this oracle checks
        from .generative import theta_at
        theta = theta_at(stream, t)
    gens = _gens(stream.basis)
    g = np.eye(gens.shape[1])
    for grp in stream.factor_order:
        idx = list(grp)
        g = expm(np.tensordot(theta[idx], gens[idx], axes=1)) @ g
    return _apply(g, np.asarray(stream.template.points, dtype=float))


def tracker_field_reference(alpha, W, b, kappa, x, inp):
    """Population field written row by row: x is (P, X), inp is (X,)."""
    W = np.asarray(W, dtype=float)
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        out[i] = -alpha * x[i] + W[i] @ x + b[i] * inp
    out[0] -= kappa * (x[0] - inp)
    return out


def integrate_reference(cfg, x0, stream, T, refine=REFERENCE_REFINE):
    """Final populations of an RK4 run at step cfg.dt / refine.

    ``x0`` may be an AgentState or a (P, X) array; returns a (P, X) array.
    """
    if not T > 0:
        raise DomainError("T must be positive")
    x = np.array(getattr(x0, "populations", x0), dtype=float)
    h = cfg.dt / refine
    n = int(round(T / h))
    W = np.asarray(cfg.W, dtype=float)
    b = np.asarray(cfg.b, dtype=float)

    held = stream_reference(stream, 0.0).reshape(-1) if stream.mode == "static" else None

    def field(t, state):
        inp = held if held is not None else stream_reference(stream, t).reshape(-1)
        return tracker_field_reference(cfg.alpha, W, b, cfg.kappa, state, inp)

    for s in range(n):
        t = s * h
        with np.errstate(over="ignore", invalid="ignore"):
            k1 = field(t, x)
            k2 = field(t + h / 2, x + h / 2 * k1)
            k3 = field(t + h / 2, x + h / 2 * k2)
            k4 = field(t + h, x + h * k3)
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NumericalBlowup(f"reference integration diverged at step {s + 1}", s + 1)
    return x


def poe_reference(twists, home_matrix, angles, basis):
    """exp(S_1 q_1) exp(S_2 q_2) ... exp(S_n q_n) M by pairwise products."""
    gens = _gens(basis)
    g = np.eye(gens.shape[1])
    for s, q in zip(twists, angles):
        coeffs = np.asarray(getattr(s, "coeffs", s), dtype=float)
        g = g @ expm(q * np.tensordot(coeffs, gens, axes=1))
    return g @ np.asarray(home_matrix, dtype=float)
