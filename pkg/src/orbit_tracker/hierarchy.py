"""Subgroup flags, level projectors and coarse-graining of residual clouds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .actions import Displacement, Observation
from .errors import ConfigError, NestingError, SubalgebraClosureError
from .lie import CLOSURE_TOL, AlgebraVector, GeneratorBasis, adjoint, catalog_basis, exp_map

SEMANTICS = ("coset", "subgroup")
INVARIANTIZE_STEPS = ("center", "scale_normalize", "radial_sort")


@dataclass(frozen=True, eq=False)
class Flag:
    """Nested generator index sets h_0 > h_1 > ... > h_L = {} of one basis.

    ``coset_sets[k-1]`` holds a_k = h_{k-1} minus h_k, the directions that
    level k owns.
    """

    basis: GeneratorBasis
    level_sets: tuple
    coset_sets: tuple
    inner_product: np.ndarray

    @property
    def n_levels(self):
        return len(self.level_sets) - 1

    def names(self, indices):
        return [self.basis.names[a] for a in indices]

    def realized_indices(self, k, semantics="coset"):
        _check_level(self, k)
        if semantics == "coset":
            return self.coset_sets[k - 1]
        if semantics == "subgroup":
            return self.level_sets[k]
        raise ValueError(f"semantics must be one of {SEMANTICS}, got {semantics!r}")

    def residual_subgroup(self, k):
        """Generators of H_k, the subgroup left to coarser levels."""
        _check_level(self, k)
        return self.level_sets[k]


@dataclass(frozen=True, eq=False)
class ProjectorPair:
    k: int
    P: np.ndarray
    Q: np.ndarray
    semantics: str
    indices: tuple

    def split(self, eta):
        """(P eta, Q eta) for a coefficient vector or AlgebraVector."""
        if isinstance(eta, AlgebraVector):
            return (AlgebraVector(self.P @ eta.coeffs, eta.basis),
                    AlgebraVector(self.Q @ eta.coeffs, eta.basis))
        eta = np.asarray(eta, dtype=float)
        return self.P @ eta, self.Q @ eta


def _check_level(flag, k):
    if not 1 <= k <= flag.n_levels:
        raise IndexError(f"level {k} outside 1..{flag.n_levels}")


def _resolve(basis, items):
    return tuple(sorted({basis.index(a) for a in items}))


def closure_defect(basis: GeneratorBasis, indices):
    """Largest out-of-set structure constant among brackets of ``indices``.

    Returns (defect, (a, b)) where (a, b) is the worst bracket, or None.
    """
    idx = list(indices)
    outside = [c for c in range(basis.dim) if c not in set(idx)]
    worst, where = 0.0, None
    if not outside:
        return worst, where
    c = basis.structure_constants
    for i, a in enumerate(idx):
        for b in idx[i + 1:]:
            leak = float(np.abs(c[a, b, outside]).max())
            if leak > worst:
                worst, where = leak, (a, b)
    return worst, where


def build_flag(basis: GeneratorBasis, level_sets, inner_product=None) -> Flag:
    """Validate a strictly decreasing chain of subalgebras ending in the empty set."""
    sets = [_resolve(basis, s) for s in level_sets]
    if len(sets) < 2:
        raise NestingError("a flag needs at least h_0 and the terminal empty set")
    if sets[-1]:
        raise NestingError("the last level set must be empty")
    for k in range(1, len(sets)):
        prev, cur = set(sets[k - 1]), set(sets[k])
        if not cur < prev:
            raise NestingError(
                f"h_{k}={[basis.names[a] for a in sets[k]]} is not a strict subset of "
                f"h_{k - 1}={[basis.names[a] for a in sets[k - 1]]}"
            )
    for k, s in enumerate(sets):
        leak, where = closure_defect(basis, s)
        if leak > CLOSURE_TOL:
            a, b = where
            c = basis.structure_constants[a, b]
            out = [basis.names[i] for i in range(basis.dim) if i not in s and abs(c[i]) > CLOSURE_TOL]
            raise SubalgebraClosureError(
                f"h_{k} is not a subalgebra: [{basis.names[a]}, {basis.names[b]}] has "
                f"components along {out}",
                bracket=(basis.names[a], basis.names[b]),
            )
    cosets = tuple(tuple(sorted(set(sets[k - 1]) - set(sets[k]))) for k in range(1, len(sets)))
    if inner_product is None:
        ip = np.eye(basis.dim)
    else:
        ip = np.array(inner_product, dtype=float)
        if ip.shape != (basis.dim, basis.dim):
            raise ConfigError(f"inner product must be {basis.dim}x{basis.dim}")
        if np.abs(ip - ip.T).max() > 1e-12:
            raise ConfigError("inner product must be symmetric")
        if np.linalg.eigvalsh(ip).min() <= 0:
            raise ConfigError("inner product must be positive definite")
    ip.setflags(write=False)
    return Flag(basis, tuple(sets), cosets, ip)


def projector(flag: Flag, k: int, semantics: str = "coset") -> ProjectorPair:
    """Projector onto the directions level k realizes, orthogonal in ``flag.inner_product``."""
    idx = flag.realized_indices(k, semantics)
    r = flag.basis.dim
    if not idx:
        p = np.zeros((r, r))
    else:
        m = flag.inner_product
        sel = np.zeros((r, len(idx)))
        sel[list(idx), np.arange(len(idx))] = 1.0
        if np.array_equal(m, np.eye(r)):
            p = sel @ sel.T
        else:
            p = sel @ np.linalg.solve(sel.T @ m @ sel, sel.T @ m)
    q = np.eye(r) - p
    p.setflags(write=False)
    q.setflags(write=False)
    return ProjectorPair(k, p, q, semantics, tuple(idx))


def projector_defect(pair: ProjectorPair, inner_product=None):
    """Worst of |P^2 - P|, |PQ|, |P + Q - I| and the M-symmetry defect."""
    p, q = pair.P, pair.Q
    r = p.shape[0]
    m = np.eye(r) if inner_product is None else inner_product
    return max(
        float(np.abs(p @ p - p).max()),
        float(np.abs(p @ q).max()),
        float(np.abs(p + q - np.eye(r)).max()),
        float(np.abs(m @ p - p.T @ m).max()),
    )


def ad_defect(flag: Flag, k: int, semantics="coset", n_samples=20, seed=0, radius=1.0,
              subgroup=None):
    """max |P Ad(h) - Ad(h) P| over seeded h in the level's residual subgroup.

    ``subgroup`` overrides the generator set sampled (default: h_k).
    """
    pair = projector(flag, k, semantics)
    idx = flag.residual_subgroup(k) if subgroup is None else _resolve(flag.basis, subgroup)
    if not idx:
        return 0.0
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        c = np.zeros(flag.basis.dim)
        v = rng.standard_normal(len(idx))
        c[list(idx)] = radius * rng.uniform() * v / np.linalg.norm(v)
        ad = adjoint(exp_map(AlgebraVector(c, flag.basis)))
        worst = max(worst, float(np.linalg.norm(pair.P @ ad - ad @ pair.P, 2)))
    return worst


def hierarchy_report(flag: Flag, semantics="coset", n_samples=20, seed=0):
    """Per-level diagnostic rows (JSON-ready)."""
    rows = []
    for k in range(1, flag.n_levels + 1):
        pair = projector(flag, k, semantics)
        fwd = [a for a in range(flag.basis.dim) if a not in pair.indices]
        rows.append({
            "level": k,
            "realizes": flag.names(pair.indices),
            "forwards": flag.names(fwd),
            "residual_subgroup": flag.names(flag.residual_subgroup(k)),
            "projector_defect": projector_defect(pair, flag.inner_product),
            "ad_defect": ad_defect(flag, k, semantics, n_samples=n_samples, seed=seed),
        })
    return rows


# flags whose levels admit an Ad(H_k)-invariant identity inner product
CATALOG_FLAGS = {
    "so2": (("rot",), ()),
    "se2": (("rot", "tx", "ty"), ("rot",), ()),
    "sim2": (("scale", "rot", "tx", "ty"), ("scale", "rot"), ("rot",), ()),
    "scale_trans2": (("scale", "tx", "ty"), ("scale",), ()),
    "se3": (("rx", "ry", "rz", "tx", "ty", "tz"), ("rx", "ry", "rz"), ()),
}


def catalog_flag(name: str) -> Flag:
    return build_flag(catalog_basis(name), CATALOG_FLAGS[name])


# ---------------------------------------------------------------------------
# coarse graining


@dataclass(frozen=True, eq=False)
class PoolingSpec:
    """Partition of point indices into blocks plus invariantization steps."""

    partition: tuple
    n_points: int
    steps: tuple = ()

    def __post_init__(self):
        blocks = tuple(tuple(int(i) for i in blk) for blk in self.partition)
        seen = []
        for blk in blocks:
            if not blk:
                raise ConfigError("empty pooling block")
            seen.extend(blk)
        if sorted(seen) != list(range(self.n_points)):
            dup = sorted({i for i in seen if seen.count(i) > 1})
            gap = sorted(set(range(self.n_points)) - set(seen))
            extra = sorted(set(seen) - set(range(self.n_points)))
            raise ConfigError(
                f"pooling partition must cover 0..{self.n_points - 1} exactly once "
                f"(overlap {dup}, gap {gap}, out of range {extra})"
            )
        for s in self.steps:
            if s not in INVARIANTIZE_STEPS:
                raise ConfigError(f"unknown invariantization step {s!r}")
        object.__setattr__(self, "partition", blocks)
        object.__setattr__(self, "steps", tuple(self.steps))

    @classmethod
    def singletons(cls, n_points):
        return cls(tuple((i,) for i in range(n_points)), n_points)

    @classmethod
    def contiguous(cls, n_points, block_size, steps=()):
        if n_points % block_size:
            raise ConfigError(f"{n_points} points do not split into blocks of {block_size}")
        return cls(tuple(tuple(range(i, i + block_size)) for i in range(0, n_points, block_size)),
                   n_points, steps)

    @property
    def n_blocks(self):
        return len(self.partition)

    def pool(self, points):
        points = np.asarray(points, dtype=float)
        if points.shape[0] != self.n_points:
            raise ConfigError(f"pooling expects {self.n_points} points, got {points.shape[0]}")
        return np.stack([points[list(blk)].mean(axis=0) for blk in self.partition])


def coarse_grain(spec: PoolingSpec, r: Displacement) -> Displacement:
    """Block means of a residual followed by the configured invariantization."""
    out = spec.pool(r.points)
    for step in spec.steps:
        if step == "center":
            out = out - out.mean(axis=0)
        elif step == "scale_normalize":
            rms = np.sqrt(np.mean(np.sum(out * out, axis=1)))
            if rms > 0:
                out = out / rms
        elif step == "radial_sort":
            out = out[np.argsort(np.linalg.norm(out, axis=1), kind="stable")]
    return Displacement(out)


def pool_observation(spec: PoolingSpec, obs: Observation) -> Observation:
    return Observation(spec.pool(obs.points))
