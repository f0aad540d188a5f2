"""Central finite differences used for log-gradients and derivative checks."""

from __future__ import annotations

from typing import Callable

import numpy as np

EPS = np.finfo(float).eps
FIRST_ORDER_SCALE = EPS ** (1.0 / 3.0)
SECOND_ORDER_SCALE = EPS ** (1.0 / 4.0)


def _steps(x: np.ndarray, scale: float) -> np.ndarray:
    return scale * np.maximum(1.0, np.abs(x))


def central_jacobian(func: Callable[[np.ndarray], np.ndarray], x, scale: float = FIRST_ORDER_SCALE) -> np.ndarray:
    """Derivative of an array-valued ``func`` along each coordinate of ``x``.

    The derivative axis is the *first* axis of the result, so for a scalar
    function this is the gradient and for a matrix-valued function of a
    d-vector the result has shape ``(d, *func(x).shape)``.
    """
    x = np.asarray(x, dtype=float)
    h = _steps(x, scale)
    out = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        # exact representable step, so (x+h)-(x-h) is 2h to the last bit
        hi = (x + e)[i] - x[i]
        out.append((np.asarray(func(x + e)) - np.asarray(func(x - e))) / (2.0 * hi))
    return np.stack(out)


def central_gradient(func: Callable[[np.ndarray], float], x, scale: float = FIRST_ORDER_SCALE) -> np.ndarray:
    return np.asarray(central_jacobian(func, x, scale), dtype=float).reshape(np.size(x))


def central_hessian(func: Callable[[np.ndarray], float], x, scale: float = SECOND_ORDER_SCALE) -> np.ndarray:
    """Hessian of a scalar function by central second differences."""
    x = np.asarray(x, dtype=float)
    d = x.size
    h = _steps(x, scale)
    hess = np.empty((d, d))
    f0 = func(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        hess[i, i] = (func(x + ei) - 2.0 * f0 + func(x - ei)) / h[i] ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h[j]
            val = (func(x + ei + ej) - func(x + ei - ej) - func(x - ei + ej) + func(x - ei - ej)) / (4.0 * h[i] * h[j])
            hess[i, j] = hess[j, i] = val
    return hess
