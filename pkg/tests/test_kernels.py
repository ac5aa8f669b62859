import os
import subprocess
import sys

import numpy as np
import pytest

from orbit_tracker import kernels
from orbit_tracker.generative import StreamConfig
from orbit_tracker.lie import catalog_basis
from orbit_tracker.tracker import AgentState, TrackerConfig, integrate, stream_inputs

from conftest import cloud

compiled = pytest.mark.skipif("compiled" not in kernels.backends(), reason="extension not built")


def _setup(mode="drift", n_pop=3, seed=0):
    basis = catalog_basis("sim2")
    rng = np.random.default_rng(seed)
    tpl = cloud(6, 2, seed=seed)
    stream = StreamConfig(basis, rng.uniform(-0.3, 0.3, 4), tpl, mode=mode,
                          rate=[0.0, 0.3, 0.1, -0.1] if mode == "drift" else None)
    cfg = TrackerConfig(alpha=2.0, W=0.3 * rng.standard_normal((n_pop, n_pop)), kappa=1.0,
                        basis=basis, dt=0.02)
    return cfg, stream, AgentState.uniform(n_pop, tpl)


def test_pure_backend_always_available():
    assert "python" in kernels.backends()
    assert kernels.BACKEND in kernels.backends()


@compiled
@pytest.mark.parametrize("mode,n_pop", [("static", 1), ("drift", 3), ("drift", 5)])
def test_backends_agree(mode, n_pop):
    cfg, stream, x0 = _setup(mode, n_pop)
    inputs = stream_inputs(stream, 200, cfg.dt)
    a = integrate(cfg, x0, inputs, backend="python")
    b = integrate(cfg, x0, inputs, backend="compiled")
    for u, v in zip(a[:4], b[:4]):
        assert np.abs(u - v).max() <= 1e-12
    assert np.abs(a[4].populations - b[4].populations).max() <= 1e-12


@compiled
def test_backends_report_same_blowup_step():
    basis = catalog_basis("so2")
    cfg = TrackerConfig(alpha=400.0, W=[[0.0]], kappa=0.0, basis=basis, dt=0.1)
    x0 = AgentState(np.zeros((1, 6)))
    inputs = np.ones((2 * 400 + 1, 6))
    steps = []
    for name, fn in kernels.backends().items():
        *_, blow = fn(x0.populations, cfg.system_matrix(), cfg.input_weights(), cfg.dt, inputs)
        steps.append(blow)
    assert steps[0] == steps[1] and steps[0] > 0


def test_pure_flag_forces_fallback():
    env = dict(os.environ, ORBIT_TRACKER_PURE="1")
    out = subprocess.run([sys.executable, "-c", "from orbit_tracker import kernels; print(kernels.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"
