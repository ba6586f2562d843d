"""Central finite-difference oracle for gradients.

The analytic gradient of every block in this repo is validated against
central differences at eps=1e-6 in float64.  For large tensors a
deterministic random subsample of coordinates is checked; the finite
difference at each sampled coordinate is exact, only the coverage is
sampled.  Relative error uses a 1e-2 denominator floor so that near-zero
gradients are compared at an absolute tolerance of 1e-6, above the float64
finite-difference noise floor.
"""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Graph, Tensor


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-2) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def max_grad_error(
    loss_fn: Callable[[], Tensor],
    tensors: Iterable[Tensor],
    eps: float = 1e-6,
    max_coords: int | None = 50,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss_fn`` must rebuild the forward pass from scratch on every call and
    return a scalar Tensor.  ``tensors`` are the leaves to check (their
    ``requires_grad`` must be True).  ``max_coords`` limits the number of
    coordinates checked per tensor (None checks all of them).
    """
    tensors = list(tensors)
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = None
    with Graph() as g:
        loss = loss_fn()
    g.backward(loss)
    analytic = []
    for t in tensors:
        if t.grad is None:
            analytic.append(np.zeros_like(t.data))
        else:
            analytic.append(t.grad.copy())

    worst = 0.0
    for t, grad in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords is None or n <= max_coords:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            f_plus = loss_fn().item()
            flat[c] = orig - eps
            f_minus = loss_fn().item()
            flat[c] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            err = float(relative_error(grad.reshape(-1)[c], fd))
            if err > worst:
                worst = err
    return worst
