import numpy as np
import pytest

from latticekam import builtin_model


@pytest.fixture(scope="session")
def mech1d():
    return builtin_model("mechanical-1d")


@pytest.fixture(scope="session")
def mech2d():
    return builtin_model("mechanical-2d")


@pytest.fixture(scope="session")
def free1d():
    return builtin_model("free", d=1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
