import numpy as np
import pytest

from reachsyn.systems import make_steer


@pytest.fixture(scope="session")
def steer_1d():
    return make_steer([0.0], [1.0], 0.05)


@pytest.fixture(scope="session")
def steer_2d():
    return make_steer([-1.0, -1.0], [1.0, 1.0], 0.3)


@pytest.fixture()
def rng():
    # fresh generator per test: deterministic and order-independent
    return np.random.default_rng(20240811)
