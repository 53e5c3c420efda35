"""
gradcheck.py - Compare analytic gradients against central finite differences
"""

from typing import Callable

import numpy as np

from .tensor import ShapeError, Tensor


def numerical_gradient(f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f(Tensor(x)).item()
        flat[i] = orig - eps
        f_minus = f(Tensor(x)).item()
        flat[i] = orig
        grad_flat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """
    Maximum relative error between backward() and central differences.

    Args:
        f: function mapping a tensor to a scalar tensor
        x: point at which to check (its data is not modified)
        eps: finite-difference step

    Returns:
        max over coordinates of |analytic - numeric| / max(1e-8, |numeric|)
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    point = Tensor(x.data, requires_grad=True)
    out = f(point)
    if out.size != 1:
        raise ShapeError(f"grad_check needs f to return a scalar, got shape {out.shape}")
    out.backward()
    analytic = point.grad if point.grad is not None else np.zeros_like(point.data)

    numeric = numerical_gradient(f, x.data, eps)
    rel = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(numeric))
    return float(rel.max()) if rel.size else 0.0
