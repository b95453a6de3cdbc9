"""Iterative homogeneity correction ``I <- I + alpha * I * (1 - I)``.

The same alpha map is applied at every iteration. For ``I`` in [0, 1] and
``alpha`` in [-1, 1] each step stays in [0, 1]: the extremes are ``I**2``
(alpha = -1) and ``1 - (1 - I)**2`` (alpha = 1), and 0 and 1 are fixed points.
"""
import numpy as np

from .errors import InvalidArgumentError

_TOL = 1e-12


def _validate(I, alpha):
    if I.shape != alpha.shape:
        raise InvalidArgumentError(f"image shape {I.shape} != alpha shape {alpha.shape}")
    if I.size and (I.min() < -_TOL or I.max() > 1 + _TOL):
        raise InvalidArgumentError("intensities must lie in [0, 1]")
    if alpha.size and (alpha.min() < -1 - _TOL or alpha.max() > 1 + _TOL):
        raise InvalidArgumentError("alpha must lie in [-1, 1]")


def hc_step(I, alpha, validate=True):
    I = np.asarray(I, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if validate:
        _validate(I, alpha)
    return I + alpha * I * (1.0 - I)


def hc_iterate(I, alpha, n, validate=True):
    return hc_iterate_with_trace(I, alpha, n, validate)[-1]


def hc_iterate_with_trace(I, alpha, n, validate=True):
    """Return ``[HC^0, ..., HC^n]``; the intermediates feed the backward pass."""
    if n < 1:
        raise InvalidArgumentError(f"iteration count must be >= 1, got {n}")
    I = np.asarray(I, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if validate:
        _validate(I, alpha)
    trace = [I]
    for _ in range(n):
        h = trace[-1]
        trace.append(h + alpha * h * (1.0 - h))
    return trace


def hc_iterate_backward(grad, trace, alpha):
    """Gradients of a scalar w.r.t. ``(I, alpha)`` given ``d/dHC^n``."""
    g_alpha = np.zeros_like(alpha)
    g = grad
    for h in reversed(trace[:-1]):
        g_alpha += g * h * (1.0 - h)
        g = g * (1.0 + alpha * (1.0 - 2.0 * h))
    return g, g_alpha
