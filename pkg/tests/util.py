"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np

from egsa.tensor import Tensor4


def rand4(rng: np.random.Generator, b, c, h, w, lo=-1.0, hi=1.0, dtype=np.float64):
    return (rng.uniform(lo, hi, size=(b, c, h, w))).astype(dtype)


def rand4_separated(rng: np.random.Generator, b, c, h, w, gap=1e-2, dtype=np.float64):
    """Random tensor whose channel values are pairwise separated per pixel.

    Keeps max-over-channel operations away from ties so finite differences
    with eps=1e-3 never cross an argmax switch.
    """
    arr = rng.uniform(-1.0, 1.0, size=(b, c, h, w))
    for _ in range(64):
        srt = np.sort(arr, axis=1)
        bad = (np.diff(srt, axis=1) < gap).any(axis=1)
        if not bad.any():
            break
        redraw = rng.uniform(-1.0, 1.0, size=(b, c, h, w))
        arr = np.where(bad[:, None], redraw, arr)
    return arr.astype(dtype)


def t64(arr, requires_grad=False) -> Tensor4:
    return Tensor4(np.asarray(arr, dtype=np.float64), requires_grad=requires_grad)


def t32(arr, requires_grad=False) -> Tensor4:
    return Tensor4(np.asarray(arr, dtype=np.float32), requires_grad=requires_grad)


def as4(arr2d) -> np.ndarray:
    """Lift a 2-D array to (1, 1, H, W)."""
    a = np.asarray(arr2d)
    return a.reshape(1, 1, *a.shape)
