import numpy as np
import pytest

from dhn.autodiff import Tape, backward, bind


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    """Norm-wise relative error between two gradient arrays."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def tape_grads(params, fn):
    """Gradient map of fn(bound) over ``params`` on a fresh tape."""
    tape = Tape()
    bound = bind(params, tape)
    return backward(tape, fn(bound))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
