import numpy as np
import pytest

from tourncp.models import DataPoint, Dataset


def make_data(rng, n, p, noise=1.0, beta=None):
    X = rng.standard_normal((n + 1, p))
    if beta is None:
        beta = rng.standard_normal(p)
    y = X @ beta + noise * rng.standard_normal(n + 1)
    return Dataset(X[:-1], y[:-1]), DataPoint(X[-1], y[-1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
