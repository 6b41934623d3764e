"""Finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ContractError
from .tensor import Tensor


def numerical_gradient(fn: Callable[[Tensor], Tensor], point: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences ``(f(x+eps) - f(x-eps)) / (2 eps)`` per coordinate."""
    x = np.array(point, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = _scalar(fn(Tensor(x.copy())))
        flat[i] = orig - eps
        fm = _scalar(fn(Tensor(x.copy())))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def _scalar(out) -> float:
    if not isinstance(out, Tensor) or out.size != 1:
        shape = getattr(out, "shape", type(out).__name__)
        raise ContractError(f"gradcheck needs a scalar-valued function, got {shape}")
    return float(out.data.reshape(()))


def analytic_gradient(fn: Callable[[Tensor], Tensor], point: np.ndarray) -> np.ndarray:
    x = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    out = fn(x)
    _scalar(out)
    out.backward()
    return np.zeros_like(x.data) if x.grad is None else x.grad


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def gradcheck(fn: Callable[[Tensor], Tensor], point, eps: float = 1e-5) -> float:
    """Max relative error between the reverse-mode and central-difference
    gradients of a scalar function at ``point`` (evaluated in float64)."""
    point = np.asarray(point, dtype=np.float64)
    a = analytic_gradient(fn, point)
    n = numerical_gradient(fn, point, eps)
    return float(relative_error(a, n).max())
