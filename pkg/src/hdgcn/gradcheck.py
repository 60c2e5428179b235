"""Central finite-difference verification of analytic gradients.

All checks run at 64-bit; finite differences are meaningless at 32-bit.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

DEFAULT_EPS = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation scaled by the larger gradient magnitude."""
    if analytic.size == 0:
        return 0.0
    num = float(np.max(np.abs(analytic - numeric)))
    den = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))), 1e-12)
    return num / den


def numerical_gradient(f: Callable[..., Tensor], arrays: Sequence[np.ndarray],
                       wrt: int, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central-difference gradient of scalar ``f(*arrays)`` w.r.t. ``arrays[wrt]``."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    target = arrays[wrt]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(*arrays).data)
        flat[i] = orig - eps
        lo = float(f(*arrays).data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def check_gradients(f: Callable[..., Tensor], tensors: Sequence[Tensor],
                    eps: float = DEFAULT_EPS) -> float:
    """Compare analytic gradients of scalar ``f(*tensors)`` against central
    differences, returning the worst relative error over all inputs.

    Inputs must be float64 leaves with ``requires_grad`` set where the
    gradient should be verified.
    """
    for t in tensors:
        if t.requires_grad:
            t.grad = None
    out = f(*tensors)
    out.backward()
    worst = 0.0
    arrays = [t.data for t in tensors]
    for i, t in enumerate(tensors):
        if not t.requires_grad:
            continue
        numeric = numerical_gradient(lambda *arrs: f(*[Tensor(a, dtype=np.float64) for a in arrs]),
                                     arrays, wrt=i, eps=eps)
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
