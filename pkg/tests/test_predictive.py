from dataclasses import replace

import numpy as np
import pytest

from orbit_tracker import oracle, predictive
from orbit_tracker.actions import Displacement, Observation, act, algebra_velocity
from orbit_tracker.errors import ConfigError, LogBranchError, SingularFit
from orbit_tracker.hierarchy import PoolingSpec, build_flag, catalog_flag, projector
from orbit_tracker.lie import AlgebraVector, GroupElement, catalog_basis, exp_map, log_map
from orbit_tracker.predictive import (
    LevelState, build_stack, canonicalize, emit_message, fit_error_slope, fit_group,
    fit_residual, predict, realize_update, run_cycle, run_cycles,
)

from conftest import cloud


def _full_level(basis, template, lam=1e-6, delta=None, semantics="coset"):
    flag = build_flag(basis, [tuple(range(basis.dim)), ()])
    return LevelState(1, delta or GroupElement.identity(basis), template,
                      projector(flag, 1, semantics), tuple(range(basis.dim)), lam,
                      PoolingSpec.singletons(template.n_points))


def _scene(seed, basis, scale=0.5):
    rng = np.random.default_rng(seed)
    tpl = cloud(8, basis.ambient_dim, seed=seed, center=True)
    theta = rng.uniform(-scale, scale, basis.dim)
    return tpl, theta, act(exp_map(AlgebraVector(theta, basis)), tpl)


# ---- predict / fit --------------------------------------------------------

def test_predict_identity(sim2):
    tpl = cloud(5, 2)
    assert np.array_equal(predict(_full_level(sim2, tpl)).points, tpl.points)


def test_predict_quarter_turn(so2):
    g = exp_map(AlgebraVector([np.pi / 2], so2))
    lvl = _full_level(so2, Observation([[1.0, 0.0]]), delta=g)
    np.testing.assert_allclose(predict(lvl).points, [[0.0, 1.0]], atol=1e-15)


def test_predict_after_realize(sim2):
    tpl = cloud(6, 2, seed=2)
    lvl = _full_level(sim2, tpl)
    eta = AlgebraVector([0.01, -0.03, 0.2, 0.1], sim2)
    before = predict(lvl)
    after = predict(realize_update(lvl, eta))
    expected = act(exp_map(AlgebraVector(lvl.projectors.P @ eta.coeffs, sim2)), before)
    assert np.abs(after.points - expected.points).max() <= 1e-10


def test_fit_zero_residual(sim2):
    tpl = cloud(6, 2, seed=1)
    for lam in (0.0, 1e-6):
        lvl = _full_level(sim2, tpl, lam)
        assert np.array_equal(fit_residual(lvl, predict(lvl)).coeffs, np.zeros(4))


def test_fit_small_rotation(se2, sim2):
    tpl = cloud(16, 2, seed=4)
    datum = act(exp_map(AlgebraVector.unit(se2, "rot", 0.05)), tpl)
    eta = fit_residual(_full_level(se2, tpl, 1e-6), datum).coeffs
    assert abs(eta[0] - 0.05) <= 5e-3
    assert np.abs(eta[1:]).max() <= 1e-3
    # with a scale generator the linearized fit absorbs the cos(0.05) - 1 radial shrink
    datum = act(exp_map(AlgebraVector.unit(sim2, "rot", 0.05)), tpl)
    eta = fit_residual(_full_level(sim2, tpl, 1e-6), datum).coeffs
    assert abs(eta[1] - np.sin(0.05)) <= 1e-4
    assert abs(eta[0] - (np.cos(0.05) - 1.0)) <= 1e-4
    assert np.abs(eta[2:]).max() <= 1e-3


def test_fit_respects_permitted_directions(sim2):
    tpl = cloud(8, 2, seed=4)
    flag = catalog_flag("sim2")
    lvl = LevelState(1, GroupElement.identity(sim2), tpl, projector(flag, 1), (2, 3))
    datum = act(exp_map(AlgebraVector([0.1, 0.1, 0.1, 0.1], sim2)), tpl)
    eta = fit_residual(lvl, datum).coeffs
    assert eta[0] == 0.0 and eta[1] == 0.0


def test_singular_fit_without_regularization(sim2):
    # one point at the origin: scale and rotation do not move it
    tpl = Observation([[0.0, 0.0]])
    datum = Observation([[0.1, 0.0]])
    with pytest.raises(SingularFit):
        fit_residual(_full_level(sim2, tpl, 0.0), datum)
    eta = fit_residual(_full_level(sim2, tpl, 1e-6), datum).coeffs
    assert np.all(np.isfinite(eta))


@pytest.mark.parametrize("seed", range(5))
def test_grid_oracle_agreement(se2, seed):
    rng = np.random.default_rng(seed)
    tpl = cloud(6, 2, seed=seed)
    eta = np.zeros(3)
    eta[1:] = rng.uniform(-0.07, 0.07, 2)
    target = act(exp_map(AlgebraVector(eta, se2)), tpl)
    est = log_map(fit_group(se2, tpl, target, indices=["tx", "ty"])).coeffs
    grid = oracle.grid_fit(se2, ["tx", "ty"], target, tpl, 0.1, 1e-3).coeffs
    assert np.abs(est - grid).max() <= 1e-3


def test_grid_oracle_examples(se2):
    tpl = cloud(5, 2, seed=1)
    assert np.array_equal(oracle.grid_fit(se2, ["rot"], tpl, tpl, 0.1, 1e-3).coeffs, np.zeros(3))
    rot = act(exp_map(AlgebraVector([0.07, 0, 0], se2)), tpl)
    assert abs(oracle.grid_fit(se2, ["rot"], rot, tpl, 0.1, 1e-3).coeffs[0] - 0.07) <= 1e-3
    with pytest.raises(Exception) as info:
        oracle.grid_fit(catalog_basis("sim2"), [0, 1, 2, 3], tpl, tpl, 0.1, 1e-3)
    assert type(info.value).__name__ == "GridBudgetError"
    with pytest.raises(Exception) as info:
        oracle.grid_fit(catalog_basis("sim2"), [0, 1, 2], tpl, tpl, 0.1, 1e-3)
    assert type(info.value).__name__ == "GridBudgetError"


@pytest.mark.parametrize("name", ["se2", "sim2", "scale_trans2", "se3"])
def test_fit_is_second_order(name):
    basis = catalog_basis(name)
    rng = np.random.default_rng(0)
    slope, errs = fit_error_slope(basis, cloud(6, basis.ambient_dim, seed=7), rng.standard_normal(basis.dim))
    assert slope >= 1.8
    assert errs[0] > errs[1] > errs[2]


# ---- realize / canonicalize / messages -----------------------------------

def test_realize_zero_and_forwarded(sim2):
    lvl = _full_level(sim2, cloud(4, 2))
    assert realize_update(lvl, AlgebraVector.zeros(sim2)) is lvl
    flag = catalog_flag("sim2")
    level1 = LevelState(1, GroupElement.identity(sim2), cloud(4, 2), projector(flag, 1), (0, 1, 2, 3))
    q_only = AlgebraVector([0.3, -0.2, 0.0, 0.0], sim2)  # scale, rot: forwarded by level 1
    assert realize_update(level1, q_only).delta.is_identity()


def test_realize_stays_in_own_span(sim2):
    flag = catalog_flag("sim2")
    lvl = LevelState(2, GroupElement.identity(sim2), cloud(4, 2), projector(flag, 2), (0, 1))
    for eta in ([0.1, 0.2, 0.3, 0.4], [-0.05, 0.0, 1.0, 0.0]):
        lvl = realize_update(lvl, AlgebraVector(eta, sim2))
    coords = log_map(lvl.delta).coeffs
    assert np.abs(coords[[1, 2, 3]]).max() <= 1e-9


def test_two_small_updates_compose(se2):
    lvl = _full_level(se2, cloud(4, 2))
    a = AlgebraVector([0.01, 0.0, 0.0], se2) * 1.0
    b = AlgebraVector([0.0, 0.01, 0.0], se2)
    two = realize_update(realize_update(lvl, a), b).delta.matrix
    one = realize_update(lvl, a + b).delta.matrix
    assert np.abs(two - one).max() <= 1e-3


def test_realize_at_cut_locus(so2):
    lvl = _full_level(so2, cloud(3, 2), delta=exp_map(AlgebraVector([np.pi / 2], so2)))
    with pytest.raises(LogBranchError):
        realize_update(lvl, AlgebraVector([np.pi / 2], so2))


def test_canonicalize_cases(sim2):
    tpl = cloud(6, 2, seed=3)
    datum = cloud(6, 2, seed=4)
    lvl = _full_level(sim2, tpl)
    assert np.array_equal(canonicalize(lvl, datum).points, (datum - tpl).points)
    moved = _full_level(sim2, tpl, delta=exp_map(AlgebraVector([0.2, 0.4, -1.0, 0.5], sim2)))
    assert np.abs(canonicalize(moved, predict(moved)).points).max() <= 1e-14


def test_canonicalize_first_order(sim2):
    tpl = cloud(8, 2, seed=5)
    lvl = _full_level(sim2, tpl)
    rng = np.random.default_rng(5)
    for _ in range(5):
        u = rng.standard_normal(4)
        eta = AlgebraVector(0.05 * u / np.linalg.norm(u), sim2)
        r = canonicalize(lvl, act(exp_map(eta), tpl)).norm()
        lin = np.linalg.norm(algebra_velocity(eta, tpl))
        assert abs(r - lin) <= 0.1 * lin


def test_messages(sim2):
    tpl = cloud(4, 2)
    lvl = _full_level(sim2, tpl)
    zero = emit_message(lvl, Displacement.zeros_like(tpl))
    assert zero.payload.norm() == 0.0 and zero.algebra_payload is None
    r = Displacement(np.random.default_rng(0).standard_normal((4, 2)))
    assert np.array_equal(emit_message(lvl, r).payload.points, r.points)
    flag = catalog_flag("sim2")
    level1 = LevelState(1, GroupElement.identity(sim2), tpl, projector(flag, 1), (0, 1, 2, 3),
                        pooling=PoolingSpec.singletons(4))
    eta = AlgebraVector([0.1, 0.2, 0.3, 0.4], sim2)
    msg = emit_message(level1, r, eta, algebra=True)
    assert np.array_equal(msg.algebra_payload, level1.projectors.Q @ eta.coeffs)
    with pytest.raises(ConfigError):
        emit_message(replace(level1, pooling=None), r)


# ---- stacks ---------------------------------------------------------------

def test_stack_converges_in_group(sim2):
    tpl, _, datum = _scene(0, sim2)
    stack = build_stack(catalog_flag("sim2"), tpl)
    diags = run_cycles(stack, datum, 50)
    last = diags[-1]
    assert len(last.levels) == 3
    assert max(lv.r_norm for lv in last.levels) <= 1e-6
    assert not any(d.mismatch_flag for d in diags)
    tops = [d.top_residual for d in diags]
    assert all(b <= a + 1e-12 for a, b in zip(tops[1:], tops[2:]))


def test_stack_recovers_parameters(sim2):
    tpl, theta, datum = _scene(1, sim2)
    stack = build_stack(catalog_flag("sim2"), tpl)
    run_cycles(stack, datum, 20)
    np.testing.assert_allclose(act(stack.hypothesis(), tpl).points, datum.points, atol=1e-10)


def test_stack_algebra_messages_converge(sim2):
    tpl, _, datum = _scene(2, sim2)
    stack = build_stack(catalog_flag("sim2"), tpl, message_mode="algebra")
    assert run_cycles(stack, datum, 30)[-1].top_residual <= 1e-6


def test_noise_triggers_mismatch(sim2):
    tpl, _, datum = _scene(3, sim2)
    noisy = Observation(datum.points + 0.1 * np.random.default_rng(1003).standard_normal(datum.points.shape))
    stack = build_stack(catalog_flag("sim2"), tpl)
    diags = run_cycles(stack, noisy, 15)
    assert not diags[8].mismatch_flag
    assert diags[9].mismatch_flag and diags[-1].mismatch_flag
    assert diags[-1].top_residual > 1e-2


def test_single_level_contraction(se2):
    tpl = cloud(6, 2, seed=8)
    stack = build_stack(build_flag(se2, [["rot", "tx", "ty"], []]), tpl)
    datum = act(exp_map(AlgebraVector([0.05, 0.05, 0.05], se2)), tpl)
    diags = run_cycles(stack, datum, 5)
    assert diags[-1].top_residual <= 1e-8


def test_pooled_stack(sim2):
    tpl, _, datum = _scene(4, sim2)
    pools = [PoolingSpec.contiguous(8, 2), PoolingSpec.singletons(4)]
    stack = build_stack(catalog_flag("sim2"), tpl, pools)
    assert stack.levels[1].template.n_points == 4
    assert run_cycles(stack, datum, 50)[-1].levels[0].r_norm <= 1e-6


def test_stack_config_errors(sim2):
    flag = catalog_flag("sim2")
    tpl = cloud(8, 2)
    with pytest.raises(ConfigError):
        build_stack(flag, tpl, [PoolingSpec.singletons(8)])
    with pytest.raises(ConfigError):
        build_stack(flag, tpl, lambdas=[1e-6, -1.0, 0.0])
    with pytest.raises(ConfigError):
        build_stack(flag, tpl, message_mode="telepathy")


def test_cycle_aborts_with_partial_diagnostics(sim2):
    stack = build_stack(catalog_flag("sim2"), cloud(8, 2))
    diag = run_cycle(stack, cloud(5, 2))
    assert diag.aborted and "DimError" in diag.aborted
    assert diag.levels == []


def test_branch_error_resets_level(sim2, monkeypatch):
    tpl, _, datum = _scene(5, sim2)
    stack = build_stack(catalog_flag("sim2"), tpl)
    real = predictive.realize_update
    calls = {"n": 0}

    def flaky(level, eta):
        calls["n"] += 1
        if calls["n"] == 1:
            raise LogBranchError("forced")
        return real(level, eta)

    monkeypatch.setattr(predictive, "realize_update", flaky)
    diag = run_cycle(stack, datum)
    assert stack.reset_count == 1 and diag.levels[0].reset
    assert stack.levels[0].delta.is_identity()
    assert diag.aborted is None


def test_cycle_determinism(sim2):
    tpl, _, datum = _scene(6, sim2)
    rows = []
    for _ in range(2):
        stack = build_stack(catalog_flag("sim2"), tpl)
        rows.append([r for d in run_cycles(stack, datum, 10) for r in d.rows()])
    assert rows[0] == rows[1]


def test_split_is_exact(sim2):
    flag = catalog_flag("sim2")
    eta = np.random.default_rng(0).standard_normal(4)
    for k in (1, 2, 3):
        p, q = projector(flag, k).split(eta)
        assert np.abs(p + q - eta).max() <= 1e-14
        assert abs(p @ q) <= 1e-12
