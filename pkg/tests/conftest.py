import numpy as np
import pytest

from bistoch.env import (ConductanceField, Environment, homogeneous_environment,
                         random_environment)
from bistoch.torus import Torus


@pytest.fixture(scope="session")
def env_rand():
    """One frozen random stream environment shared across modules."""
    return random_environment(2, 8, seed=7)


@pytest.fixture(scope="session")
def env_homog():
    return homogeneous_environment(2, 8)


@pytest.fixture(scope="session")
def env_two_point():
    """d=1 alternating conductances {1, 4}: harmonic mean 1.6 exactly."""
    t = Torus(1, 8)
    vals = np.array([1.0, 4.0] * 4)[:, None]
    return Environment(t, ConductanceField.from_canonical(t, vals))
