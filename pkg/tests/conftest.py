import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from orbit_tracker.actions import Observation
from orbit_tracker.lie import CATALOG, catalog_basis

settings.register_profile(
    "suite", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("suite")

CATALOG_NAMES = sorted(CATALOG)


def cloud(n, d, seed=0, center=False):
    p = np.random.default_rng(seed).standard_normal((n, d))
    if center:
        p = p - p.mean(axis=0)
    return Observation(p)


def ball(rng, r, radius=1.0):
    """Uniform direction, uniform radius in [0, radius)."""
    v = rng.standard_normal(r)
    return radius * rng.uniform() * v / np.linalg.norm(v)


@pytest.fixture(params=CATALOG_NAMES)
def any_basis(request):
    return catalog_basis(request.param)


@pytest.fixture
def se2():
    return catalog_basis("se2")


@pytest.fixture
def sim2():
    return catalog_basis("sim2")


@pytest.fixture
def so2():
    return catalog_basis("so2")


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
