"""Central finite-difference gradient checking."""

import numpy as np

from serfocal.errors import DomainError, NumericError


def relative_error(analytic, numeric):
    """Max over coordinates of ``|a - n| / max(1e-8, |a| + |n|)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))))


def numeric_gradient(fun, array, eps=1e-5, indices=None):
    """Central differences of the scalar ``fun()`` w.r.t. ``array``.

    ``array`` is perturbed in place and restored. When ``indices`` (flat
    positions) is given, only those coordinates are estimated and a 1-d
    array in the same order is returned.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise DomainError(f"step {eps} outside [1e-7, 1e-3]")
    if not array.flags.c_contiguous:
        raise ValueError("array must be C-contiguous so it can be perturbed in place")
    flat = array.reshape(-1)
    coords = range(flat.size) if indices is None else indices
    grads = np.empty(len(coords), dtype=np.float64)
    for k, i in enumerate(coords):
        orig = flat[i]
        flat[i] = orig + eps
        plus = fun()
        flat[i] = orig - eps
        minus = fun()
        flat[i] = orig
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        grads[k] = (plus - minus) / (2 * eps)
    return grads.reshape(array.shape) if indices is None else grads


def grad_check(f, x, eps=1e-5):
    """Compare the analytic gradient of ``f`` against central differences.

    ``f(x)`` must return ``(value, grad)``. Returns the max relative error.
    """
    x = np.array(x, dtype=np.float64)
    value, analytic = f(x)
    if not np.isfinite(value) or not np.all(np.isfinite(analytic)):
        raise NumericError("non-finite value or analytic gradient")
    numeric = numeric_gradient(lambda: f(x)[0], x, eps)
    return relative_error(analytic, numeric)
