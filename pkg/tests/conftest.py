import numpy as np
import pytest

from bftracer.modes import build_mode_set, preset_potential


@pytest.fixture(scope="session")
def ms1():
    return build_mode_set(1, 1)


@pytest.fixture(scope="session")
def soft_v(ms1):
    return preset_potential("soft", ms1, kind="V")


@pytest.fixture(scope="session")
def soft_w(ms1):
    return preset_potential("soft", ms1, kind="W")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
