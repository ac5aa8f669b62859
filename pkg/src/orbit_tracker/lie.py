"""Finite-dimensional affine matrix Lie groups in homogeneous coordinates.

Every group acting on R^d is represented by (d+1)x(d+1) matrices whose bottom
row is (0, ..., 0, 1); algebra elements are the same shape with a zero bottom
row.  A :class:`GeneratorBasis` fixes an ordered set of algebra generators and
all coordinates (:class:`AlgebraVector`) are taken with respect to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import (
    BasisError,
    BasisMismatch,
    InvalidAlgebraVector,
    LogBranchError,
    NotAdClosed,
)

CLOSURE_TOL = 1e-10
ANTISYMMETRY_TOL = 1e-12
AD_SPAN_TOL = 1e-8
BRACKET_TOL = 1e-10

_TAYLOR_DEGREE = 18
_EXP_SCALE_TARGET = 0.5
_LOG_SQRT_TARGET = 0.25
# eigenvalues of the linear block this close to the negative real axis are on the cut locus
_BRANCH_ANGLE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class GeneratorBasis:
    """Ordered generators of a matrix Lie algebra of affine maps of R^d.

    Build instances with :meth:`from_generators` (validating) or
    :func:`catalog_basis`; the raw constructor does no checking.
    """

    basis_id: str
    ambient_dim: int
    generators: np.ndarray
    names: tuple
    structure_constants: np.ndarray
    closure_residual: float
    _flat: np.ndarray = field(repr=False)
    _gram: np.ndarray = field(repr=False)
    _gram_diag: np.ndarray | None = field(repr=False)

    @classmethod
    def from_generators(cls, basis_id, generators, names=None, check=True):
        gens = np.array(generators, dtype=float)
        if gens.ndim != 3 or gens.shape[1] != gens.shape[2] or gens.shape[1] < 2:
            raise BasisError(
                f"generators must have shape (r, d+1, d+1), got {gens.shape}", "lie.shape"
            )
        r, n, _ = gens.shape
        if names is None:
            names = tuple(f"T{a}" for a in range(r))
        names = tuple(str(s) for s in names)
        if len(names) != r:
            raise BasisError(f"{len(names)} names for {r} generators", "lie.shape")
        if len(set(names)) != r:
            raise BasisError("generator names must be unique", "lie.shape")
        if not np.all(np.isfinite(gens)):
            raise BasisError("generators contain non-finite entries", "lie.shape")
        gens.setflags(write=False)

        flat = gens.reshape(r, n * n).T.copy()
        gram = flat.T @ flat
        offdiag = gram - np.diag(np.diag(gram))
        gram_diag = np.diag(gram).copy() if not np.any(offdiag) else None
        if check and np.linalg.matrix_rank(gram) < r:
            raise BasisError("generators are linearly dependent", "lie.independence")

        basis = cls(
            basis_id=str(basis_id),
            ambient_dim=n - 1,
            generators=gens,
            names=names,
            structure_constants=np.zeros((r, r, r)),
            closure_residual=0.0,
            _flat=flat,
            _gram=gram,
            _gram_diag=gram_diag,
        )
        consts = np.zeros((r, r, r))
        worst = 0.0
        for a in range(r):
            for b in range(r):
                comm = gens[a] @ gens[b] - gens[b] @ gens[a]
                coords, resid = basis.project(comm)
                consts[a, b] = coords
                worst = max(worst, resid)
        consts.setflags(write=False)
        object.__setattr__(basis, "structure_constants", consts)
        object.__setattr__(basis, "closure_residual", worst)
        if check:
            basis.validate()
        return basis

    @property
    def dim(self):
        """Number of generators r."""
        return self.generators.shape[0]

    @property
    def matrix_size(self):
        return self.ambient_dim + 1

    def index(self, name_or_index):
        if isinstance(name_or_index, (int, np.integer)):
            a = int(name_or_index)
            if not 0 <= a < self.dim:
                raise IndexError(f"generator index {a} out of range for r={self.dim}")
            return a
        try:
            return self.names.index(str(name_or_index))
        except ValueError:
            raise IndexError(
                f"unknown generator {name_or_index!r}; basis {self.basis_id} has {self.names}"
            ) from None

    def project(self, matrix):
        """Coordinates of ``matrix`` on the generator span and the residual norm."""
        vec = np.asarray(matrix, dtype=float).reshape(-1)
        rhs = self._flat.T @ vec
        if self._gram_diag is not None:
            coords = rhs / self._gram_diag
        else:
            coords = np.linalg.solve(self._gram, rhs)
        resid = float(np.linalg.norm(self._flat @ coords - vec))
        return coords, resid

    def hat(self, coeffs):
        """Matrix sum_a coeffs[a] T_a."""
        return np.tensordot(np.asarray(coeffs, dtype=float), self.generators, axes=1)

    def violations(self):
        """List of (invariant id, message) pairs for every failed basis invariant."""
        out = []
        gens = self.generators
        if np.any(gens[:, -1, :] != 0.0):
            out.append(("lie.bottom_row", "a generator has a nonzero bottom row"))
        anti = np.abs(self.structure_constants + self.structure_constants.transpose(1, 0, 2))
        if anti.size and anti.max() > ANTISYMMETRY_TOL:
            out.append(("lie.antisymmetry", f"structure constants asymmetric by {anti.max():.3g}"))
        if self.closure_residual > CLOSURE_TOL:
            out.append(
                (
                    "lie.closure",
                    f"commutators leave the generator span (residual {self.closure_residual:.3g})",
                )
            )
        return out

    def validate(self):
        bad = self.violations()
        if bad:
            ident, msg = bad[0]
            raise BasisError(f"basis {self.basis_id!r}: {msg}", ident)
        return self


@dataclass(frozen=True, eq=False)
class AlgebraVector:
    """Coordinates of a Lie algebra element in the order of ``basis``."""

    coeffs: np.ndarray
    basis: GeneratorBasis

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.shape[0] != self.basis.dim:
            raise InvalidAlgebraVector(
                f"expected {self.basis.dim} coefficients for basis {self.basis.basis_id}, "
                f"got {c.shape[0]}"
            )
        if not np.all(np.isfinite(c)):
            raise InvalidAlgebraVector("algebra vector has non-finite coefficients")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, basis):
        return cls(np.zeros(basis.dim), basis)

    @classmethod
    def unit(cls, basis, a, scale=1.0):
        c = np.zeros(basis.dim)
        c[basis.index(a)] = scale
        return cls(c, basis)

    def matrix(self):
        return self.basis.hat(self.coeffs)

    def norm(self):
        return float(np.linalg.norm(self.coeffs))

    def _same(self, other):
        if other.basis.basis_id != self.basis.basis_id:
            raise BasisMismatch(f"{self.basis.basis_id} vs {other.basis.basis_id}")

    def __add__(self, other):
        self._same(other)
        return AlgebraVector(self.coeffs + other.coeffs, self.basis)

    def __sub__(self, other):
        self._same(other)
        return AlgebraVector(self.coeffs - other.coeffs, self.basis)

    def __neg__(self):
        return AlgebraVector(-self.coeffs, self.basis)

    def __mul__(self, scalar):
        return AlgebraVector(self.coeffs * float(scalar), self.basis)

    __rmul__ = __mul__

    def __repr__(self):
        return f"AlgebraVector({self.basis.basis_id}, {np.array2string(self.coeffs, precision=6)})"


@dataclass(frozen=True, eq=False)
class GroupElement:
    """Homogeneous matrix of an affine group element."""

    matrix: np.ndarray
    basis: GeneratorBasis

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        n = self.basis.matrix_size
        if m.shape != (n, n):
            raise BasisMismatch(f"expected a {n}x{n} matrix for {self.basis.basis_id}, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("group element has non-finite entries")
        bottom = np.zeros(n)
        bottom[-1] = 1.0
        if np.max(np.abs(m[-1] - bottom)) > 1e-12:
            raise ValueError("group element bottom row must be (0, ..., 0, 1)")
        if n > 1:
            lin = m[:-1, :-1]
            scale = np.abs(lin).max()
            # cheap singularity screen: |det| relative to the entry scale
            if scale == 0.0 or abs(np.linalg.det(lin / scale)) < 1e-14:
                raise ValueError("group element is not invertible")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls, basis):
        return cls(np.eye(basis.matrix_size), basis)

    @property
    def linear(self):
        return self.matrix[:-1, :-1]

    @property
    def translation(self):
        return self.matrix[:-1, -1]

    def is_identity(self):
        return bool(np.array_equal(self.matrix, np.eye(self.basis.matrix_size)))

    def __matmul__(self, other):
        return compose(self, other)

    def __repr__(self):
        return f"GroupElement({self.basis.basis_id}, {self.matrix.tolist()})"


def _check_same(g, h):
    if g.basis.basis_id != h.basis.basis_id:
        raise BasisMismatch(f"cannot combine {g.basis.basis_id} with {h.basis.basis_id}")


def _expm(a):
    """Scaling and squaring with a fixed-degree Taylor polynomial."""
    n = a.shape[0]
    ident = np.eye(n)
    norm = np.abs(a).sum(axis=0).max()
    squarings = 0
    if norm > _EXP_SCALE_TARGET:
        squarings = int(math.ceil(math.log2(norm / _EXP_SCALE_TARGET)))
        a = a / (2.0**squarings)
    # Horner: I + a(I + a/2(I + a/3(...)))
    result = ident
    for k in range(_TAYLOR_DEGREE, 0, -1):
        result = ident + (a @ result) / k
    for _ in range(squarings):
        result = result @ result
    return result


def _sqrtm_db(m, max_iter=60):
    """Principal square root via the Denman-Beavers iteration."""
    y = m
    z = np.eye(m.shape[0])
    for _ in range(max_iter):
        y_next = 0.5 * (y + np.linalg.inv(z))
        z = 0.5 * (z + np.linalg.inv(y))
        done = np.abs(y_next - y).max() <= 1e-15 * max(1.0, np.abs(y_next).max())
        y = y_next
        if done:
            break
    return y


def _logm(m):
    """Principal logarithm by inverse scaling and squaring plus the atanh series."""
    n = m.shape[0]
    ident = np.eye(n)
    roots = 0
    while np.abs(m - ident).sum(axis=0).max() > _LOG_SQRT_TARGET:
        m = _sqrtm_db(m)
        roots += 1
        if roots > 64:
            raise LogBranchError("inverse scaling did not converge")
    z = np.linalg.solve((m + ident).T, (m - ident).T).T
    z2 = z @ z
    term = z
    total = z.copy()
    for j in range(1, 40):
        term = term @ z2
        inc = term / (2 * j + 1)
        total += inc
        if np.abs(inc).max() < 1e-20:
            break
    return (2.0 ** (roots + 1)) * total


def exp_map(v: AlgebraVector) -> GroupElement:
    """Group element exp(sum_a v_a T_a)."""
    if not isinstance(v, AlgebraVector):
        raise InvalidAlgebraVector(f"expected an AlgebraVector, got {type(v).__name__}")
    return GroupElement(_expm(v.matrix()), v.basis)


def check_log_branch(g: GroupElement):
    """Raise LogBranchError when g sits on or beyond the principal-log cut locus."""
    lin = g.linear
    if lin.size == 0:
        return
    if np.linalg.det(lin) <= 0.0:
        raise LogBranchError("linear block has non-positive determinant; no real logarithm")
    eig = np.linalg.eigvals(lin)
    angles = np.abs(np.angle(eig))
    if np.any(angles >= math.pi - _BRANCH_ANGLE_TOL):
        raise LogBranchError(
            f"element is at the cut locus (rotation angle {angles.max():.12g} ~ pi)"
        )


def log_map(g: GroupElement) -> AlgebraVector:
    """Principal logarithm, in coordinates of the basis of g."""
    if g.is_identity():
        return AlgebraVector.zeros(g.basis)
    check_log_branch(g)
    mat = _logm(g.matrix)
    coords, resid = g.basis.project(mat)
    if resid > 1e-8 * max(1.0, float(np.abs(mat).max())):
        raise NotAdClosed(
            f"logarithm leaves the span of {g.basis.basis_id} (residual {resid:.3g})"
        )
    return AlgebraVector(coords, g.basis)


def compose(g: GroupElement, h: GroupElement) -> GroupElement:
    _check_same(g, h)
    return GroupElement(g.matrix @ h.matrix, g.basis)


def inverse(g: GroupElement) -> GroupElement:
    lin_inv = np.linalg.inv(g.linear)
    n = g.basis.matrix_size
    m = np.zeros((n, n))
    m[:-1, :-1] = lin_inv
    m[:-1, -1] = -lin_inv @ g.translation
    m[-1, -1] = 1.0
    return GroupElement(m, g.basis)


def adjoint(g: GroupElement) -> np.ndarray:
    """r x r matrix whose column a holds the coordinates of g T_a g^-1."""
    basis = g.basis
    r = basis.dim
    if g.is_identity():
        return np.eye(r)
    ginv = inverse(g).matrix
    out = np.empty((r, r))
    for a in range(r):
        coords, resid = basis.project(g.matrix @ basis.generators[a] @ ginv)
        if resid > AD_SPAN_TOL * max(1.0, float(np.abs(coords).max(initial=0.0))):
            raise NotAdClosed(
                f"Ad(g) {basis.names[a]} leaves the span of {basis.basis_id} "
                f"(residual {resid:.3g}); basis is misconfigured"
            )
        out[:, a] = coords
    return out


def bracket(a: AlgebraVector, b: AlgebraVector) -> AlgebraVector:
    """Lie bracket [a, b] = AB - BA projected back onto the generators."""
    if a.basis.basis_id != b.basis.basis_id:
        raise BasisMismatch(f"{a.basis.basis_id} vs {b.basis.basis_id}")
    am, bm = a.matrix(), b.matrix()
    comm = am @ bm - bm @ am
    coords, resid = a.basis.project(comm)
    if resid > BRACKET_TOL * max(1.0, float(np.abs(comm).max())):
        raise NotAdClosed(f"bracket leaves the span of {a.basis.basis_id} (residual {resid:.3g})")
    return AlgebraVector(coords, a.basis)


# ---------------------------------------------------------------------------
# catalog

def _e(n, i, j, val=1.0):
    m = np.zeros((n, n))
    m[i, j] = val
    return m


def _rot2():
    m = np.zeros((3, 3))
    m[0, 1], m[1, 0] = -1.0, 1.0
    return m


def _scale(d):
    m = np.zeros((d + 1, d + 1))
    m[np.arange(d), np.arange(d)] = 1.0
    return m


def _so3_gen(axis):
    m = np.zeros((4, 4))
    i, j = [(1, 2), (2, 0), (0, 1)][axis]
    m[i, j], m[j, i] = -1.0, 1.0
    return m


def _catalog_spec(name):
    if name == "so2":
        return [_rot2()], ("rot",)
    if name == "se2":
        return [_rot2(), _e(3, 0, 2), _e(3, 1, 2)], ("rot", "tx", "ty")
    if name == "sim2":
        return [_scale(2), _rot2(), _e(3, 0, 2), _e(3, 1, 2)], ("scale", "rot", "tx", "ty")
    if name == "scale_trans2":
        return [_scale(2), _e(3, 0, 2), _e(3, 1, 2)], ("scale", "tx", "ty")
    if name == "se3":
        gens = [_so3_gen(0), _so3_gen(1), _so3_gen(2)] + [_e(4, i, 3) for i in range(3)]
        return gens, ("rx", "ry", "rz", "tx", "ty", "tz")
    raise KeyError(name)


CATALOG: tuple = ("so2", "se2", "sim2", "se3", "scale_trans2")


@lru_cache(maxsize=None)
def catalog_basis(name: str) -> GeneratorBasis:
    """Built-in basis by name: so2, se2, sim2, se3 or scale_trans2."""
    try:
        gens, names = _catalog_spec(name)
    except KeyError:
        raise KeyError(f"unknown basis {name!r}; catalog has {', '.join(CATALOG)}") from None
    return GeneratorBasis.from_generators(name, gens, names)


def as_algebra(basis: GeneratorBasis, coeffs: Sequence[float] | AlgebraVector) -> AlgebraVector:
    if isinstance(coeffs, AlgebraVector):
        return coeffs
    return AlgebraVector(np.asarray(coeffs, dtype=float), basis)
