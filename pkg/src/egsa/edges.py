"""Binary edge maps from images and depth, plus per-scale edge pyramids.

Edge maps are plain constant tensors of shape (1, 1, H, W) whose entries are
exactly 0.0 or 1.0. They never carry gradients: edge extraction sits outside
the differentiable graph by construction.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DataError, ShapeError
from .tensor import Tensor4

RGB_SOURCE = "RGB"
DEPTH_SOURCE = "Depth"

DEFAULT_SIGMA = 1.4
DEFAULT_LOW = 0.1
DEFAULT_HIGH = 0.3

_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = _SOBEL_X.T

_GRAY_WEIGHTS = (0.299, 0.587, 0.114)


def rgb_to_gray(rgb: Tensor4) -> Tensor4:
    """Luminance map 0.299 R + 0.587 G + 0.114 B, shape (1, 1, H, W)."""
    if rgb.channels != 3:
        raise ShapeError(f"expected 3 channels, got {rgb.channels}")
    r, g, b = rgb.data[:, 0], rgb.data[:, 1], rgb.data[:, 2]
    wr, wg, wb = _GRAY_WEIGHTS
    gray = wr * r + wg * g + wb * b
    return Tensor4(gray[:, None].astype(rgb.data.dtype))


def _single_plane(t: Tensor4, what: str) -> np.ndarray:
    if t.batch != 1 or t.channels != 1:
        raise ShapeError(f"{what} must have shape (1, 1, H, W), got {t.shape}")
    return t.data[0, 0].astype(np.float64)


def _nms(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep local maxima along the gradient direction (4 orientation bins).

    Exact two-pixel plateaus straddling a symmetric edge are broken by
    keeping only the pixel on the negative-gradient side: a pixel survives
    iff mag >= forward neighbour and mag > backward neighbour.
    """
    h, w = mag.shape
    padded = np.pad(mag, 1, constant_values=0.0)

    def shifted(dr, dc):
        return padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]

    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    # (bin mask, neighbour offset, signed projection of the gradient on it)
    bins = (
        ((angle < 22.5) | (angle >= 157.5), (0, 1), gx),
        ((angle >= 22.5) & (angle < 67.5), (1, 1), gx + gy),
        ((angle >= 67.5) & (angle < 112.5), (1, 0), gy),
        ((angle >= 112.5) & (angle < 157.5), (1, -1), gy - gx),
    )
    keep = np.zeros_like(mag, dtype=bool)
    for mask, (dr, dc), proj in bins:
        fwd = shifted(dr, dc)
        bwd = shifted(-dr, -dc)
        n_plus = np.where(proj >= 0, fwd, bwd)
        n_minus = np.where(proj >= 0, bwd, fwd)
        keep |= mask & (mag >= n_plus) & (mag > n_minus)
    keep &= mag > 0
    return np.where(keep, mag, 0.0)


def _hysteresis(nms: np.ndarray, low: float, high: float) -> np.ndarray:
    weak = nms >= low
    strong = nms >= high
    if not strong.any():
        return np.zeros_like(nms, dtype=np.float32)
    labels, count = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    keep_ids = np.unique(labels[strong])
    out = np.isin(labels, keep_ids) & weak
    return out.astype(np.float32)


def canny(gray: Tensor4, sigma: float = DEFAULT_SIGMA,
          low: float = DEFAULT_LOW, high: float = DEFAULT_HIGH) -> Tensor4:
    """Classical Canny on a (1, 1, H, W) image with values in [0, 1].

    Pipeline: Gaussian blur (truncated at 3 sigma) -> Sobel gradients ->
    non-maximum suppression with 4 orientation bins -> double-threshold
    hysteresis with 8-connectivity. Thresholds apply to raw Sobel magnitude.
    """
    if not (0.0 < low < high):
        raise ValueError(f"need 0 < low < high, got low={low} high={high}")
    img = _single_plane(gray, "canny input")
    blurred = ndimage.gaussian_filter(img, sigma=sigma, mode="nearest",
                                      truncate=3.0)
    gx = ndimage.correlate(blurred, _SOBEL_X, mode="nearest")
    gy = ndimage.correlate(blurred, _SOBEL_Y, mode="nearest")
    mag = np.hypot(gx, gy)
    edges = _hysteresis(_nms(mag, gx, gy), low, high)
    return Tensor4(edges[None, None])


def depth_to_edges(depth: Tensor4, sigma: float = DEFAULT_SIGMA,
                   low: float = DEFAULT_LOW, high: float = DEFAULT_HIGH) -> Tensor4:
    """Canny on a min-max normalized depth plane.

    Per-image normalization keeps the fixed thresholds meaningful across
    scenes of different depth ranges; a constant plane maps to all-zero
    edges without dividing by zero.
    """
    plane = _single_plane(depth, "depth")
    if not np.isfinite(plane).all():
        raise DataError("depth contains non-finite values")
    lo, hi = plane.min(), plane.max()
    if hi == lo:
        return Tensor4(np.zeros((1, 1) + plane.shape, dtype=np.float32))
    normalized = (plane - lo) / (hi - lo)
    return canny(Tensor4(normalized[None, None]), sigma=sigma, low=low, high=high)


@dataclass(frozen=True)
class EdgePyramid:
    """Per-scale binary edge maps, ordered coarsest first."""

    levels: tuple
    source: str

    def __post_init__(self):
        if self.source not in (RGB_SOURCE, DEPTH_SOURCE):
            raise ValueError(f"unknown edge source {self.source!r}")

    def __len__(self):
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)


def build_pyramid(edge: Tensor4, scale_dims, source: str = RGB_SOURCE) -> EdgePyramid:
    """Max-pool a full-resolution edge map down to each (H_k, W_k).

    A coarse pixel is 1 iff any covered fine pixel is 1, so thin edges
    survive downsampling and every level stays binary.
    """
    plane = _single_plane(edge, "edge map")
    if not np.isin(plane, (0.0, 1.0)).all():
        raise DataError("edge map values must be exactly 0 or 1")
    h, w = plane.shape
    levels = []
    for hk, wk in scale_dims:
        if h % hk or w % wk:
            raise ShapeError(f"cannot pool ({h}, {w}) down to ({hk}, {wk})")
        pooled = plane.reshape(hk, h // hk, wk, w // wk).max(axis=(1, 3))
        levels.append(Tensor4(pooled[None, None].astype(np.float32)))
    return EdgePyramid(levels=tuple(levels), source=source)


def zero_pyramid(scale_dims, source: str = RGB_SOURCE) -> EdgePyramid:
    """All-zero pyramid: with it, edge gating reduces to plain attention."""
    levels = tuple(Tensor4(np.zeros((1, 1, hk, wk), dtype=np.float32))
                   for hk, wk in scale_dims)
    return EdgePyramid(levels=levels, source=source)
