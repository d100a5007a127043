import numpy as np
import pytest

from geoclap.data import SyntheticGenConfig, generate_synthetic_triplets
from geoclap.encoders import ModelConfig, init_snapshot


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    """Small dims so per-test training and gradient checks stay fast."""
    return ModelConfig(embed_dim=16, hidden_dims=(12,))


@pytest.fixture
def tiny_snapshot(tiny_model):
    return init_snapshot(tiny_model, seed=7)


@pytest.fixture(scope="session")
def small_world():
    """Shared synthetic dataset: 256 samples, single class."""
    return generate_synthetic_triplets(SyntheticGenConfig(n_samples=256, seed=11))
