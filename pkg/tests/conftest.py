import numpy as np
import pytest

from rosgd.families import generate_quadratic_family


@pytest.fixture(scope="session")
def acceptance_family_512():
    """d=5, lambda=1, nonconvexity=1, unit ball, T=512."""
    return generate_quadratic_family(5, 512, 1.0, 1.0, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
