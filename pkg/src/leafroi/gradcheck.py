"""Central finite-difference gradient checks, independent of the tape."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward, mul, sum_all


def numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``max|a - n| / max(max|a|, max|n|)``, the error relative to the gradient scale."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
                    projection_seed: int = 0) -> float:
    """Worst relative error over ``inputs`` for the scalar ``sum(fn(*inputs) * R)``.

    ``R`` is a fixed random projection so every output entry contributes.
    """
    for t in inputs:
        t.requires_grad = True
        t.data = np.ascontiguousarray(t.data)
    out = fn(*inputs)
    r = np.random.default_rng(projection_seed).standard_normal(out.shape)

    def scalar() -> float:
        return float((fn(*inputs).data * r).sum())

    with Tape() as tape:
        out = fn(*inputs)
        loss = _project(out, r)
    grads = backward(loss, tape, inputs)
    worst = 0.0
    for t in inputs:
        num = numeric_grad(scalar, t.data, eps)
        worst = max(worst, relative_error(grads[t], num))
    return worst


def _project(out: Tensor, r: np.ndarray) -> Tensor:
    return sum_all(mul(out, Tensor(r)))
