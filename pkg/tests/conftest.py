import numpy as np
import pytest

from sepformer import tensor as T


@pytest.fixture(autouse=True)
def _clean_engine_state():
    """Keep the global tape empty and NaN scanning on for every test."""
    T.clear_tape()
    T.set_debug_checks(True)
    yield
    T.set_debug_checks(False)
    T.clear_tape()


def central_difference(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Gradient of scalar-valued f at x by central finite differences.

    Independent of the autodiff engine: f is called on plain numpy arrays
    and must return a float.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a.ravel()), np.linalg.norm(b.ravel()), 1e-12)
    return float(np.linalg.norm((a - b).ravel()) / denom)
