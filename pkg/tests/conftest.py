import numpy as np
import pytest

from dvwu import Dataset


def make_dataset(rng, n, d, scale=1.0, norm_cap=None):
    """Random labeled dataset; rows optionally capped to unit-ball norms."""
    x = rng.normal(size=(n, d)) * scale
    if norm_cap is not None:
        norms = np.linalg.norm(x, axis=1)
        big = norms > norm_cap
        x[big] = x[big] * (norm_cap / norms[big, None])
    w_true = rng.normal(size=d)
    y = np.where(x @ w_true + 0.3 * rng.normal(size=n) >= 0, 1.0, -1.0)
    return Dataset(features=x, labels=y)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_data(rng):
    return make_dataset(rng, 40, 5, scale=0.4, norm_cap=1.0)
