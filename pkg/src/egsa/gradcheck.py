"""Finite-difference verification of analytic gradients.

The checker re-evaluates a scalar loss with each parameter entry nudged by
+/- eps and compares the central difference against the tape's gradient.
Inputs are promoted to float64 first so the comparison is limited by the
truncation error of the stencil, not by storage precision.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor4


def to_float64(t: Tensor4) -> Tensor4:
    out = Tensor4(t.data.astype(np.float64), requires_grad=t.requires_grad, name=t.name)
    return out


def finite_diff_gradient(
    loss_fn: Callable[[], Tensor4], p: Tensor4, eps: float = 1e-3
) -> np.ndarray:
    """Central-difference gradient of loss_fn with respect to every entry of p."""
    g = np.zeros_like(p.data)
    flat = p.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = loss_fn().item()
        flat[i] = orig - eps
        lo = loss_fn().item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return g


def max_rel_error(
    loss_fn: Callable[[], Tensor4],
    params: Sequence[Tensor4],
    eps: float = 1e-3,
    floor: float = 1e-2,
) -> float:
    """Worst relative disagreement between analytic and numeric gradients.

    Per entry: |analytic - numeric| / max(|analytic|, |numeric|, floor).
    The floor turns the ratio into an absolute comparison for near-zero
    gradients, where a pure relative error is ill-conditioned.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError("gradient checks must run on float64 tensors")
        p.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad_array()
        numeric = finite_diff_gradient(loss_fn, p, eps)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst
