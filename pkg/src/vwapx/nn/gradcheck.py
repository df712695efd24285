"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(f: Callable[[], float], x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x``, perturbed in place."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Norm-wise relative error; ``floor`` keeps identically-zero gradients from
    turning finite-difference round-off into a large ratio."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def check_gradients(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
                    eps: float = 1e-4) -> dict[str, float]:
    """Compare analytic and numerical gradients of ``loss_fn()`` for each tensor.

    ``loss_fn`` must rebuild the graph from the current ``.data`` of every
    tensor in ``params`` on each call. Returns the relative error per name.
    """
    for t in params.values():
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)
    backward(loss_fn())
    errors = {}
    for name, t in params.items():
        analytic = t.grad.copy()
        numeric = numerical_grad(lambda: loss_fn().item(), t.data, eps)
        errors[name] = relative_error(analytic, numeric)
    return errors
