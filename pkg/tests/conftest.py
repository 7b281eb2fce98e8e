import numpy as np
import pytest


def numeric_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` at ``x``, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        out[i] = (f(up) - f(down)) / (2.0 * h)
    return out


def max_rel_error(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric)) / np.max(np.abs(numeric)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
