"""Depth loss (value + gradient + surface-normal terms), segmentation
cross-entropy, and the weighted multi-scale total.

Norms are normalized per pixel: the value term is a root-mean-square and
the gradient/normal terms are mean absolute differences, so magnitudes do
not scale with resolution. Batches average per-sample values.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor4

# keeps the RMS term differentiable when prediction equals ground truth
_RMS_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta_seg: float = 0.1

    def __post_init__(self):
        if self.alpha < 0 or self.beta_seg < 0:
            raise ValueError("loss weights must be non-negative")


def _check_depth(d: Tensor4, what: str):
    if d.channels != 1:
        raise ShapeError(f"{what} must be 1-channel, got {d.channels}")
    if d.height < 2 or d.width < 2:
        raise ShapeError(f"{what} needs at least 2x2 pixels, got {d.shape}")


def depth_gradients(d: Tensor4):
    """Forward differences (gx, gy); the last column/row is zero."""
    _check_depth(d, "depth")
    return T.forward_diff(d, "x"), T.forward_diff(d, "y")


def surface_normals(d: Tensor4) -> Tensor4:
    """Unit normals (-gx, -gy, 1)/norm per pixel, as a 3-channel tensor."""
    gx, gy = depth_gradients(d)
    denom = T.sqrt(T.adds(T.add(T.mul(gx, gx), T.mul(gy, gy)), 1.0))
    ones = Tensor4(np.ones(denom.shape, dtype=denom.dtype))
    return T.concat_channels([
        T.div(T.muls(gx, -1.0), denom),
        T.div(T.muls(gy, -1.0), denom),
        T.div(ones, denom),
    ])


def depth_loss(pred: Tensor4, gt: Tensor4) -> Tensor4:
    """Per-sample RMS of the depth error plus mean absolute gradient and
    surface-normal differences, averaged over the batch."""
    if pred.shape != gt.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    _check_depth(pred, "depth prediction")
    diff = T.sub(pred, gt)
    rms = T.mean_all(T.sqrt(T.adds(T.mean_per_sample(T.mul(diff, diff)), _RMS_EPS)))

    gx_p, gy_p = depth_gradients(pred)
    gx_g, gy_g = depth_gradients(gt)
    grad_term = T.muls(
        T.add(T.mean_all(T.absolute(T.sub(gx_p, gx_g))),
              T.mean_all(T.absolute(T.sub(gy_p, gy_g)))),
        0.5)

    normal_term = T.mean_all(T.absolute(T.sub(surface_normals(pred),
                                              surface_normals(gt))))
    return T.add(T.add(rms, grad_term), normal_term)


def seg_loss(logits: Tensor4, classes) -> Tensor4:
    """Pixel-mean cross-entropy of softmaxed logits against class indices."""
    return T.softmax_cross_entropy(logits, classes)


def total_loss(depth_terms, seg_terms, weights: LossWeights) -> Tensor4:
    """alpha * mean(depth terms) + beta_seg * mean(seg terms).

    Means over (scale, iteration) keep the loss scale independent of how
    many refinement iterations the decoder runs.
    """
    if not depth_terms or not seg_terms:
        raise ValueError("need at least one depth and one seg term")

    def mean_of(terms):
        acc = terms[0]
        for t in terms[1:]:
            acc = T.add(acc, t)
        return T.muls(acc, 1.0 / len(terms))

    return T.add(T.muls(mean_of(depth_terms), weights.alpha),
                 T.muls(mean_of(seg_terms), weights.beta_seg))


def downsample_depth(gt: Tensor4, hk: int, wk: int) -> Tensor4:
    """Bilinear ground-truth depth for a coarser prediction scale."""
    return T.resize_bilinear(gt, hk, wk)


def downsample_labels(classes: np.ndarray, hk: int, wk: int) -> np.ndarray:
    """Nearest-neighbor class indices on the corner-aligned sample grid."""
    h, w = classes.shape[-2:]
    rows = np.round(np.linspace(0.0, h - 1, hk)).astype(int) if hk > 1 else np.array([0])
    cols = np.round(np.linspace(0.0, w - 1, wk)).astype(int) if wk > 1 else np.array([0])
    return classes[..., rows[:, None], cols[None, :]]
