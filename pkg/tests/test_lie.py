import numpy as np
import pytest
from hypothesis import given, strategies as st

from orbit_tracker import oracle
from orbit_tracker.errors import (
    BasisError, BasisMismatch, InvalidAlgebraVector, LogBranchError, NotAdClosed,
)
from orbit_tracker.lie import (
    AlgebraVector, GeneratorBasis, GroupElement, adjoint, bracket, catalog_basis,
    compose, exp_map, inverse, log_map,
)

from conftest import CATALOG_NAMES, ball


def _translation(basis, t):
    m = np.eye(basis.matrix_size)
    m[:-1, -1] = t
    return GroupElement(m, basis)


def _broken_basis():
    # rot and tx without ty: brackets and conjugates leave the span
    se2 = catalog_basis("se2")
    return GeneratorBasis.from_generators("rot_tx", se2.generators[:2], ["rot", "tx"], check=False)


# ---- exp ------------------------------------------------------------------

def test_exp_zero_is_exact_identity(any_basis):
    g = exp_map(AlgebraVector.zeros(any_basis))
    assert np.array_equal(g.matrix, np.eye(any_basis.matrix_size))


def test_exp_quarter_turn(so2):
    g = exp_map(AlgebraVector([np.pi / 2], so2))
    np.testing.assert_allclose(g.linear, [[0, -1], [1, 0]], atol=1e-15)
    np.testing.assert_allclose(g.translation, [0, 0], atol=1e-15)


def test_exp_matches_taylor_oracle(se2):
    v = [np.pi, 1.0, 0.0]
    ref = oracle.expm_taylor_reference(se2.hat(v))
    assert np.abs(exp_map(AlgebraVector(v, se2)).matrix - ref).max() <= 1e-10


@pytest.mark.parametrize("bad", [[np.nan, 0, 0], [0, np.inf, 0]])
def test_exp_rejects_non_finite(se2, bad):
    with pytest.raises(InvalidAlgebraVector):
        exp_map(AlgebraVector(bad, se2))


def test_algebra_vector_length_checked(se2):
    with pytest.raises(InvalidAlgebraVector):
        AlgebraVector([1.0, 2.0], se2)


# ---- log ------------------------------------------------------------------

def test_log_identity(any_basis):
    v = log_map(GroupElement.identity(any_basis))
    assert np.array_equal(v.coeffs, np.zeros(any_basis.dim))


def test_log_quarter_turn(so2):
    m = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert log_map(GroupElement(m, so2)).coeffs[0] == pytest.approx(np.pi / 2, abs=1e-12)


@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_log_exp_roundtrip_seeded(name):
    basis = catalog_basis(name)
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        v = ball(rng, basis.dim)
        worst = max(worst, np.linalg.norm(log_map(exp_map(AlgebraVector(v, basis))).coeffs - v))
    assert worst <= 1e-9


def test_log_cut_locus_raises(so2):
    g = GroupElement(np.diag([-1.0, -1.0, 1.0]), so2)
    with pytest.raises(LogBranchError):
        log_map(g)


@given(st.lists(st.floats(-1.0, 1.0), min_size=4, max_size=4))
def test_roundtrip_property_sim2(coeffs):
    sim2 = catalog_basis("sim2")
    v = np.array(coeffs)
    g = exp_map(AlgebraVector(v, sim2))
    back = exp_map(log_map(g))
    assert np.abs(back.matrix - g.matrix).max() <= 1e-9


# ---- group law ------------------------------------------------------------

def test_compose_identity_left(se2):
    g = exp_map(AlgebraVector([0.3, -1.0, 2.0], se2))
    assert np.array_equal(compose(GroupElement.identity(se2), g).matrix, g.matrix)


def test_translations_add(se2):
    g = compose(_translation(se2, [1, 0]), _translation(se2, [0, 2]))
    np.testing.assert_array_equal(g.translation, [1, 2])
    np.testing.assert_array_equal(g.linear, np.eye(2))


def test_inverse_of_product(any_basis):
    rng = np.random.default_rng(5)
    for _ in range(50):
        g = exp_map(AlgebraVector(ball(rng, any_basis.dim, 2.0), any_basis))
        h = exp_map(AlgebraVector(ball(rng, any_basis.dim, 2.0), any_basis))
        lhs = inverse(compose(g, h)).matrix
        rhs = compose(inverse(h), inverse(g)).matrix
        assert np.abs(lhs - rhs).max() <= 1e-10
        assert np.abs(compose(g, inverse(g)).matrix - np.eye(any_basis.matrix_size)).max() <= 1e-10


def test_compose_basis_mismatch(se2, sim2):
    with pytest.raises(BasisMismatch):
        compose(GroupElement.identity(se2), GroupElement.identity(sim2))


def test_group_element_bottom_row_checked(se2):
    m = np.eye(3)
    m[2, 0] = 1e-6
    with pytest.raises(ValueError):
        GroupElement(m, se2)


def test_group_element_singular_rejected(se2):
    with pytest.raises(ValueError):
        GroupElement(np.diag([1.0, 0.0, 1.0]), se2)


# ---- adjoint --------------------------------------------------------------

def test_adjoint_identity(any_basis):
    assert np.array_equal(adjoint(GroupElement.identity(any_basis)), np.eye(any_basis.dim))


def test_adjoint_quarter_turn_se2(se2):
    g = exp_map(AlgebraVector([np.pi / 2, 0, 0], se2))
    ad = adjoint(g)
    ref = oracle.adjoint_reference(se2, g.matrix)
    np.testing.assert_allclose(ad, ref, atol=1e-12)
    np.testing.assert_allclose(ad[:, 1], [0, 0, 1], atol=1e-12)  # tx -> ty
    np.testing.assert_allclose(ad[:, 0], [1, 0, 0], atol=1e-12)  # rot fixed


def test_adjoint_homomorphism_and_oracle(any_basis):
    rng = np.random.default_rng(2)
    for _ in range(20):
        g = exp_map(AlgebraVector(ball(rng, any_basis.dim), any_basis))
        h = exp_map(AlgebraVector(ball(rng, any_basis.dim), any_basis))
        assert np.abs(adjoint(compose(g, h)) - adjoint(g) @ adjoint(h)).max() <= 1e-10
        assert np.abs(adjoint(g) - oracle.adjoint_reference(any_basis, g.matrix)).max() <= 1e-10


def test_adjoint_not_closed():
    basis = _broken_basis()
    g = exp_map(AlgebraVector([0.5, 0.0], basis))
    with pytest.raises(NotAdClosed):
        adjoint(g)


# ---- bracket and structure constants --------------------------------------

def test_bracket_self_is_zero(sim2):
    a = AlgebraVector([0.3, -0.2, 1.0, 0.5], sim2)
    assert np.array_equal(bracket(a, a).coeffs, np.zeros(4))


def test_bracket_rot_tx_is_ty(se2):
    rot = AlgebraVector.unit(se2, "rot")
    tx = AlgebraVector.unit(se2, "tx")
    out = bracket(rot, tx).coeffs
    np.testing.assert_allclose(out, oracle.commutator_reference(se2, rot.coeffs, tx.coeffs), atol=1e-14)
    np.testing.assert_allclose(out, [0, 0, 1], atol=1e-14)


def test_bracket_not_closed():
    basis = _broken_basis()
    with pytest.raises(NotAdClosed):
        bracket(AlgebraVector([1.0, 0.0], basis), AlgebraVector([0.0, 1.0], basis))


def test_structure_constants_reproduce_commutators(any_basis):
    gens = any_basis.generators
    c = any_basis.structure_constants
    for a in range(any_basis.dim):
        for b in range(any_basis.dim):
            comm = gens[a] @ gens[b] - gens[b] @ gens[a]
            assert np.abs(np.tensordot(c[a, b], gens, axes=1) - comm).max() <= 1e-10
    assert np.abs(c + c.transpose(1, 0, 2)).max() <= 1e-12


def test_catalog_bases_valid(any_basis):
    assert any_basis.violations() == []
    assert np.all(any_basis.generators[:, -1, :] == 0)


def test_closure_violation_names_invariant():
    with pytest.raises(BasisError) as info:
        GeneratorBasis.from_generators("rot_tx", catalog_basis("se2").generators[:2])
    assert info.value.invariant == "lie.closure"


def test_bottom_row_violation_reported():
    g = np.zeros((1, 3, 3))
    g[0, 2, 0] = 1.0
    basis = GeneratorBasis.from_generators("bad", g, check=False)
    assert "lie.bottom_row" in [ident for ident, _ in basis.violations()]
