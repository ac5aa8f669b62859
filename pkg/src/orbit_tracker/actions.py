"""Affine group actions on labeled point clouds.

Points keep their index for life; correspondence between clouds is by index.
Positions (:class:`Observation`) move by the full affine map while
differences of positions (:class:`Displacement`) move by the linear block
only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimError
from .lie import AlgebraVector, GeneratorBasis, GroupElement


def _points(arr, d=None):
    p = np.array(arr, dtype=float)
    if p.ndim == 1:
        if d is None:
            raise DimError("a flat vector needs the point dimension d")
        if p.size % d:
            raise DimError(f"flat length {p.size} is not a multiple of d={d}")
        p = p.reshape(-1, d)
    if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
        raise DimError(f"expected an (N, d) array with N >= 1, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("point coordinates must be finite")
    p.setflags(write=False)
    return p


class _Cloud:
    __slots__ = ()
    points: np.ndarray

    @property
    def n_points(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]

    @property
    def flat_dim(self):
        return self.points.size

    @property
    def flat(self):
        return self.points.reshape(-1)

    def norm(self):
        return float(np.linalg.norm(self.points))

    def _compat(self, other):
        if self.points.shape != other.points.shape:
            raise DimError(f"shape mismatch {self.points.shape} vs {other.points.shape}")


@dataclass(frozen=True, eq=False)
class Observation(_Cloud):
    """N ordered points in R^d."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _points(self.points))

    @classmethod
    def from_flat(cls, flat, d):
        return cls(_points(flat, d))

    def __sub__(self, other):
        if isinstance(other, Observation):
            self._compat(other)
            return Displacement(self.points - other.points)
        if isinstance(other, Displacement):
            self._compat(other)
            return Observation(self.points - other.points)
        return NotImplemented

    def __add__(self, other):
        if isinstance(other, Displacement):
            self._compat(other)
            return Observation(self.points + other.points)
        return NotImplemented

    def to_csv_row(self):
        return ",".join(repr(float(v)) for v in self.flat)

    def to_json(self):
        return json.dumps([[float(v) for v in p] for p in self.points])

    @classmethod
    def from_json(cls, text):
        return cls(np.array(json.loads(text), dtype=float))

    @classmethod
    def from_csv_row(cls, row, d):
        return cls.from_flat([float(s) for s in row.split(",")], d)


@dataclass(frozen=True, eq=False)
class Displacement(_Cloud):
    """Per-point difference vectors; transforms by the differential only."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _points(self.points))

    @classmethod
    def from_flat(cls, flat, d):
        return cls(_points(flat, d))

    @classmethod
    def zeros_like(cls, cloud):
        return cls(np.zeros_like(cloud.points))

    def __add__(self, other):
        if isinstance(other, Displacement):
            self._compat(other)
            return Displacement(self.points + other.points)
        if isinstance(other, Observation):
            return other + self
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Displacement):
            self._compat(other)
            return Displacement(self.points - other.points)
        return NotImplemented

    def __neg__(self):
        return Displacement(-self.points)

    def __mul__(self, scalar):
        return Displacement(self.points * float(scalar))

    __rmul__ = __mul__


def _check_dim(g, cloud):
    if g.basis.ambient_dim != cloud.d:
        raise DimError(
            f"group {g.basis.basis_id} acts on R^{g.basis.ambient_dim}, cloud lives in R^{cloud.d}"
        )


def act(g: GroupElement, obs: Observation) -> Observation:
    """Map every point through the homogeneous matrix of g."""
    if not isinstance(obs, Observation):
        raise TypeError("act() moves positions; use act_linear() for displacements")
    _check_dim(g, obs)
    if g.is_identity():
        return obs
    return Observation(obs.points @ g.linear.T + g.translation)


def act_linear(g: GroupElement, diff: Displacement) -> Displacement:
    """Apply only the linear block of g to each difference vector."""
    if not isinstance(diff, Displacement):
        raise TypeError("act_linear() moves displacements; use act() for positions")
    _check_dim(g, diff)
    return Displacement(diff.points @ g.linear.T)


def induced_velocity(basis: GeneratorBasis, a, obs: Observation) -> np.ndarray:
    """Flat velocity d/de act(exp(e T_a), obs) at e = 0."""
    a = basis.index(a)
    if obs.d != basis.ambient_dim:
        raise DimError(f"basis acts on R^{basis.ambient_dim}, cloud lives in R^{obs.d}")
    t = basis.generators[a]
    return (obs.points @ t[:-1, :-1].T + t[:-1, -1]).reshape(-1)


def velocity_matrix(basis: GeneratorBasis, obs: Observation, indices=None) -> np.ndarray:
    """(X, len(indices)) matrix whose columns are induced velocities."""
    if indices is None:
        indices = range(basis.dim)
    cols = [induced_velocity(basis, a, obs) for a in indices]
    if not cols:
        return np.zeros((obs.flat_dim, 0))
    return np.stack(cols, axis=1)


def algebra_velocity(v: AlgebraVector, obs: Observation) -> np.ndarray:
    """Velocity field of a general algebra element sum_a v_a T_a."""
    m = v.matrix()
    if obs.d != v.basis.ambient_dim:
        raise DimError(f"basis acts on R^{v.basis.ambient_dim}, cloud lives in R^{obs.d}")
    return (obs.points @ m[:-1, :-1].T + m[:-1, -1]).reshape(-1)


def act_flat(g: GroupElement, flat: np.ndarray) -> np.ndarray:
    """Act on a stacked vector of points (any number of clouds concatenated)."""
    d = g.basis.ambient_dim
    pts = np.asarray(flat, dtype=float).reshape(-1, d)
    return (pts @ g.linear.T + g.translation).reshape(-1)


def act_linear_flat(g: GroupElement, flat: np.ndarray) -> np.ndarray:
    d = g.basis.ambient_dim
    pts = np.asarray(flat, dtype=float).reshape(-1, d)
    return (pts @ g.linear.T).reshape(-1)
