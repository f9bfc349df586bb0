import numpy as np
import pytest

from ergoverify import presets


@pytest.fixture(scope="session")
def ns_model():
    return presets.desk_ns()


@pytest.fixture(scope="session")
def ev_model():
    return presets.desk_ev()


@pytest.fixture(scope="session")
def lag_model():
    return presets.desk_lagrangian()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
