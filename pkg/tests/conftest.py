import numpy as np
import pytest

from ghostfree.image_io import LdrImage
from ghostfree.network import TINY_CONFIG, NetworkConfig, init_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_params():
    return init_params(TINY_CONFIG, seed=0)


@pytest.fixture(scope="session")
def small_params():
    """Window 8 like the full model, but narrow enough for fast tests."""
    return init_params(NetworkConfig(feat_channels=8, window=8, heads=2), seed=3)


def random_ldr(rng, h, w, ev=0.0):
    return LdrImage(rng.random((h, w, 3)), ev)
