import numpy as np
import pytest

from tgclust.io import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def small_bundle():
    return generate_synthetic(SyntheticSpec(N=40, K=2, E=2000, p_in=0.95, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
