"""Central finite-difference gradient checking.

Used by the test suite to verify every explicit backward pass against a
numerical derivative that knows nothing about the analytic one.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued f at x, elementwise."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f(x)
        flat[i] = orig - eps
        f_minus = f(x)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |a|, |n|), a scale-aware elementwise error."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    analytic_grad: np.ndarray,
    eps: float = 1e-5,
    rtol: float = 1e-4,
    mask: np.ndarray | None = None,
) -> float:
    """Compare an analytic gradient to central differences.

    ``mask`` marks entries to check (True = include); use it to exclude
    non-differentiable points. Returns the observed relative error and
    raises AssertionError when it exceeds ``rtol``.
    """
    numeric = numerical_gradient(f, np.array(x, dtype=float, copy=True), eps=eps)
    a = np.asarray(analytic_grad, dtype=float)
    if mask is not None:
        a = np.where(mask, a, 0.0)
        numeric = np.where(mask, numeric, 0.0)
    err = relative_error(a, numeric)
    if err > rtol:
        raise AssertionError(f"gradient mismatch: relative error {err:.3e} > {rtol:.1e}")
    return err
