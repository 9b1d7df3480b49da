import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from anisovie import fftconv
from anisovie.grid import make_grid

settings.register_profile(
    "anisovie", deadline=None, max_examples=15, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "anisovie"))

LONG = os.environ.get("ANISOVIE_LONG", "1") != "0"


def pytest_collection_modifyitems(config, items):
    if LONG:
        return
    skip = pytest.mark.skip(reason="long desk-scale run; set ANISOVIE_LONG=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def _fresh_plans():
    yield
    fftconv.clear_plan_cache()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid24():
    return make_grid(24)


def gaussian(grid, a=0.05, center=(0.5, 0.5, 0.5)):
    x, y, z = grid.mesh()
    X, Y, Z = x - center[0], y - center[1], z - center[2]
    psi = np.exp(-(X ** 2 + Y ** 2 + Z ** 2) / a ** 2) * np.ones(grid.shape)
    grad = np.stack([-2 * X / a ** 2 * psi, -2 * Y / a ** 2 * psi, -2 * Z / a ** 2 * psi])
    return psi, grad
