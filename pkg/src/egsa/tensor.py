"""Dense rank-4 tensors with reverse-mode autodiff on top of numpy.

A Tensor4 always has shape (batch, channel, height, width) and float32 or
float64 storage. Operations build a tape when any input has
``requires_grad`` set and gradient recording is enabled; ``backward()`` on a
scalar (1x1x1x1) result then fills ``.grad`` on every tensor along the path.

Conventions:
  - float32 is the normal storage dtype; float64 is accepted so gradient
    verification can run end to end in 64-bit.
  - reductions (sum/mean/pooling) accumulate in float64 and cast back to
    the input dtype, so fixed seeds give bit-identical, well-conditioned
    results on either storage type.
  - operation order is fixed; no reduction is reassociated at runtime.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, ShapeError

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape recording (evaluation mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor4:
    """A (batch, channel, height, width) float tensor, optionally on the tape.

    ``grad`` is None until backward touches the tensor; a None grad means
    exactly zero. ``_parents`` / ``_backward`` record the producing
    operation for reverse-mode differentiation.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data)
        if arr.ndim != 4:
            raise ShapeError(f"Tensor4 needs 4 dims, got shape {arr.shape}")
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"Tensor4 dims must be >= 1, got {arr.shape}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    # -- shape accessors -------------------------------------------------
    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def batch(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor4":
        return Tensor4(self.data.copy())

    def grad_array(self) -> np.ndarray:
        """Gradient as an array; a never-touched grad is all zeros."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor4(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # -- autodiff ----------------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g.astype(self.data.dtype, copy=False)

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss to every reachable input."""
        if self.data.shape != (1, 1, 1, 1):
            raise ShapeError(f"backward() requires a scalar loss, got {self.shape}")
        order: list[Tensor4] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor4, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def constant(data, name: str = "") -> Tensor4:
    return Tensor4(data, requires_grad=False, name=name)


def param(data, name: str = "") -> Tensor4:
    return Tensor4(data, requires_grad=True, name=name)


def zeros(b: int, c: int, h: int, w: int, dtype=np.float32) -> Tensor4:
    return Tensor4(np.zeros((b, c, h, w), dtype=dtype))


def full(b: int, c: int, h: int, w: int, value: float, dtype=np.float32) -> Tensor4:
    return Tensor4(np.full((b, c, h, w), value, dtype=dtype))


def scalar(value: float, dtype=np.float32) -> Tensor4:
    return Tensor4(np.full((1, 1, 1, 1), value, dtype=dtype))


def _make(data: np.ndarray, parents: tuple, backward_fn) -> Tensor4:
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor4(data, requires_grad=track)
    if track:
        out._parents = parents
        out._backward = backward_fn
    return out


def _check_broadcast(a: Tensor4, b: Tensor4) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Two-sided singleton broadcasting: every dim pair must be equal or
    contain a 1. Returns the axes each operand was expanded along."""
    axes_a, axes_b = [], []
    for i, (da, db) in enumerate(zip(a.shape, b.shape)):
        if da != db:
            if da == 1:
                axes_a.append(i)
            elif db == 1:
                axes_b.append(i)
            else:
                raise ShapeError(f"shapes {a.shape} and {b.shape} do not broadcast")
    return tuple(axes_a), tuple(axes_b)


def _reduce_to(g: np.ndarray, shape: tuple, axes: tuple[int, ...]) -> np.ndarray:
    if axes:
        g = g.sum(axis=axes, keepdims=True, dtype=np.float64)
    return g.reshape(shape)


# -- elementwise arithmetic ---------------------------------------------------

def add(a: Tensor4, b: Tensor4) -> Tensor4:
    axes_a, axes_b = _check_broadcast(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.shape, axes_a))
        if b.requires_grad:
            b._accumulate(_reduce_to(g, b.shape, axes_b))

    return _make(a.data + b.data, (a, b), backward)


def sub(a: Tensor4, b: Tensor4) -> Tensor4:
    axes_a, axes_b = _check_broadcast(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.shape, axes_a))
        if b.requires_grad:
            b._accumulate(-_reduce_to(g, b.shape, axes_b))

    return _make(a.data - b.data, (a, b), backward)


def mul(a: Tensor4, b: Tensor4) -> Tensor4:
    axes_a, axes_b = _check_broadcast(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g * b.data, a.shape, axes_a))
        if b.requires_grad:
            b._accumulate(_reduce_to(g * a.data, b.shape, axes_b))

    return _make(a.data * b.data, (a, b), backward)


def div(a: Tensor4, b: Tensor4) -> Tensor4:
    axes_a, axes_b = _check_broadcast(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g / b.data, a.shape, axes_a))
        if b.requires_grad:
            b._accumulate(_reduce_to(-g * a.data / (b.data * b.data), b.shape, axes_b))

    return _make(a.data / b.data, (a, b), backward)


def pointwise(a: Tensor4, b: Tensor4, op: str) -> Tensor4:
    """Named elementwise dispatch; b may have singleton dims (e.g. 1 channel)."""
    try:
        fn = {"add": add, "sub": sub, "mul": mul}[op]
    except KeyError:
        raise ValueError(f"unknown pointwise op {op!r}") from None
    return fn(a, b)


def adds(x: Tensor4, c: float) -> Tensor4:
    def backward(g):
        if x.requires_grad:
            x._accumulate(g)

    return _make(x.data + x.data.dtype.type(c), (x,), backward)


def muls(x: Tensor4, c: float) -> Tensor4:
    cc = x.data.dtype.type(c)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * cc)

    return _make(x.data * cc, (x,), backward)


# -- nonlinearities -----------------------------------------------------------

def sigmoid(x: Tensor4) -> Tensor4:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * out * (1.0 - out))

    return _make(out, (x,), backward)


def relu(x: Tensor4) -> Tensor4:
    mask = x.data > 0

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return _make(np.where(mask, x.data, x.data.dtype.type(0)), (x,), backward)


def softplus(x: Tensor4) -> Tensor4:
    """log(1 + exp(x)), computed stably; derivative is sigmoid(x)."""
    d = x.data
    out = np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d)))

    def backward(g):
        if x.requires_grad:
            s = np.empty_like(d)
            pos = d >= 0
            s[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
            ex = np.exp(d[~pos])
            s[~pos] = ex / (1.0 + ex)
            x._accumulate(g * s)

    return _make(out, (x,), backward)


def sqrt(x: Tensor4) -> Tensor4:
    out = np.sqrt(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * 0.5 / out)

    return _make(out, (x,), backward)


def absolute(x: Tensor4) -> Tensor4:
    """|x| with subgradient 0 at exactly 0."""

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * np.sign(x.data))

    return _make(np.abs(x.data), (x,), backward)


# -- reductions and pooling ---------------------------------------------------

def sum_all(x: Tensor4) -> Tensor4:
    val = x.data.sum(dtype=np.float64)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, g.reshape(())))

    return _make(np.full((1, 1, 1, 1), val, dtype=x.data.dtype), (x,), backward)


def mean_all(x: Tensor4) -> Tensor4:
    n = x.data.size
    val = x.data.sum(dtype=np.float64) / n

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, g.reshape(()) / n))

    return _make(np.full((1, 1, 1, 1), val, dtype=x.data.dtype), (x,), backward)


def mean_per_sample(x: Tensor4) -> Tensor4:
    """Mean over (channel, height, width) per batch element -> (B,1,1,1)."""
    n = x.channels * x.height * x.width
    val = (x.data.sum(axis=(1, 2, 3), keepdims=True, dtype=np.float64) / n)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g / n, x.shape))

    return _make(val.astype(x.data.dtype), (x,), backward)


def channel_pool(x: Tensor4, mode: str) -> Tensor4:
    """Per-pixel reduction across channels -> (B, 1, H, W)."""
    if mode == "mean":
        c = x.channels
        out = (x.data.sum(axis=1, keepdims=True, dtype=np.float64) / c).astype(x.data.dtype)

        def backward(g):
            if x.requires_grad:
                x._accumulate(np.broadcast_to(g / c, x.shape))

        return _make(out, (x,), backward)
    if mode == "max":
        idx = x.data.argmax(axis=1, keepdims=True)  # first max on ties
        out = np.take_along_axis(x.data, idx, axis=1)

        def backward(g):
            if x.requires_grad:
                gx = np.zeros_like(x.data)
                np.put_along_axis(gx, idx, g, axis=1)
                x._accumulate(gx)

        return _make(out, (x,), backward)
    raise ValueError(f"unknown channel_pool mode {mode!r}")


def spatial_mean(x: Tensor4) -> Tensor4:
    """Global average pool over (H, W) -> (B, C, 1, 1)."""
    n = x.height * x.width
    out = (x.data.sum(axis=(2, 3), keepdims=True, dtype=np.float64) / n).astype(x.data.dtype)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g / n, x.shape))

    return _make(out, (x,), backward)


# -- structure ops ------------------------------------------------------------

def concat_channels(parts: list[Tensor4]) -> Tensor4:
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    splits = [p.channels for p in parts]
    offs = np.cumsum([0] + splits)

    def backward(g):
        for p, lo, hi in zip(parts, offs[:-1], offs[1:]):
            if p.requires_grad:
                p._accumulate(g[:, lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=1), tuple(parts), backward)


def forward_diff(x: Tensor4, axis: str) -> Tensor4:
    """Forward difference along 'x' (columns) or 'y' (rows), last line zero."""
    d = x.data
    out = np.zeros_like(d)
    if axis == "x":
        out[:, :, :, :-1] = d[:, :, :, 1:] - d[:, :, :, :-1]
    elif axis == "y":
        out[:, :, :-1, :] = d[:, :, 1:, :] - d[:, :, :-1, :]
    else:
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")

    def backward(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(d)
        if axis == "x":
            gx[:, :, :, 1:] += g[:, :, :, :-1]
            gx[:, :, :, :-1] -= g[:, :, :, :-1]
        else:
            gx[:, :, 1:, :] += g[:, :, :-1, :]
            gx[:, :, :-1, :] -= g[:, :, :-1, :]
        x._accumulate(gx)

    return _make(out, (x,), backward)


# -- convolution ---------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    b, c = xp.shape[:2]
    s0, s1, s2, s3 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (b, c, kh, kw, oh, ow), (s0, s1, s2, s3, s2 * stride, s3 * stride)
    )
    return view.reshape(b, c * kh * kw, oh * ow)


def conv2d(
    x: Tensor4,
    weight: Tensor4,
    bias: Tensor4 | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor4:
    """Cross-correlation with kernel (outC, inC, kH, kW); kH, kW must be odd."""
    oc, ic, kh, kw = weight.shape
    if ic != x.channels:
        raise ShapeError(f"kernel expects {ic} input channels, tensor has {x.channels}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel dims must be odd, got {kh}x{kw}")
    oh = (x.height + 2 * padding - kh) // stride + 1
    ow = (x.width + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input {x.height + 2 * padding}x{x.width + 2 * padding}"
        )
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = np.ascontiguousarray(_im2col(xp, kh, kw, stride, oh, ow))
    w2 = weight.data.reshape(oc, ic * kh * kw)
    out = np.matmul(w2, cols).reshape(x.batch, oc, oh, ow)
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(x.batch, oc, oh * ow)
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
            weight._accumulate(gw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)).reshape(bias.shape))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2)
            d6 = dcols.reshape(x.batch, ic, kh, kw, oh, ow)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += d6[
                        :, :, i, j
                    ]
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            x._accumulate(dxp)

    return _make(out, (x, weight) + ((bias,) if bias is not None else ()), backward)


# -- resampling -----------------------------------------------------------------

def _corner_aligned_axis(out_n: int, in_n: int):
    """Source indices and fractions for corner-aligned linear sampling."""
    if out_n == 1 or in_n == 1:
        i0 = np.zeros(out_n, dtype=np.intp)
        return i0, i0.copy(), np.zeros(out_n)
    pos = np.arange(out_n) * ((in_n - 1) / (out_n - 1))
    i0 = np.minimum(np.floor(pos).astype(np.intp), in_n - 2)
    frac = pos - i0
    return i0, i0 + 1, frac


def _axis_weight_matrix(out_n: int, in_n: int, dtype) -> np.ndarray:
    """(out_n, in_n) matrix of corner-aligned linear sampling weights."""
    i0, i1, frac = _corner_aligned_axis(out_n, in_n)
    mat = np.zeros((out_n, in_n), dtype=dtype)
    rows = np.arange(out_n)
    np.add.at(mat, (rows, i0), 1.0 - frac)
    np.add.at(mat, (rows, i1), frac)
    return mat


def _bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a (..., H, W) array (pure numpy)."""
    in_h, in_w = arr.shape[-2:]
    if (out_h, out_w) == (in_h, in_w):
        return arr.copy()
    r0, r1, fy = _corner_aligned_axis(out_h, in_h)
    c0, c1, fx = _corner_aligned_axis(out_w, in_w)
    fy = fy.reshape(-1, 1)
    fx = fx.reshape(1, -1)
    a00 = arr[..., r0[:, None], c0[None, :]]
    a01 = arr[..., r0[:, None], c1[None, :]]
    a10 = arr[..., r1[:, None], c0[None, :]]
    a11 = arr[..., r1[:, None], c1[None, :]]
    top = a00 * (1 - fx) + a01 * fx
    bot = a10 * (1 - fx) + a11 * fx
    return (top * (1 - fy) + bot * fy).astype(arr.dtype)


def resize_bilinear(x: Tensor4, out_h: int, out_w: int) -> Tensor4:
    """Corner-aligned bilinear resize; identity size is a bitwise copy."""
    if out_h < 1 or out_w < 1:
        raise ShapeError("output dims must be >= 1")
    in_h, in_w = x.height, x.width
    if (out_h, out_w) == (in_h, in_w):

        def backward_id(g):
            if x.requires_grad:
                x._accumulate(g)

        return _make(x.data.copy(), (x,), backward_id)

    out = _bilinear_resize(x.data, out_h, out_w)
    # The resample is separable and linear: out = A_h @ x @ A_w^T with tiny
    # per-axis weight matrices, so the adjoint is two dense matmuls.
    a_h = _axis_weight_matrix(out_h, in_h, x.data.dtype)
    a_w = _axis_weight_matrix(out_w, in_w, x.data.dtype)

    def backward(g):
        if not x.requires_grad:
            return
        gx = np.matmul(np.matmul(a_h.T, g), a_w)
        x._accumulate(gx.astype(x.data.dtype, copy=False))

    return _make(out, (x,), backward)


# -- classification loss --------------------------------------------------------

def softmax_cross_entropy(logits: Tensor4, classes: np.ndarray) -> Tensor4:
    """Mean over pixels of -log softmax(logits)[true class]; scalar output.

    ``classes`` is an integer (B, H, W) array and is a constant (no gradient).
    """
    b, n, h, w = logits.shape
    cls = np.asarray(classes)
    if cls.shape == (b, 1, h, w):
        cls = cls[:, 0]
    if cls.shape != (b, h, w):
        raise ShapeError(f"class map shape {cls.shape} does not match logits {logits.shape}")
    if cls.min() < 0 or cls.max() >= n:
        raise DataError(f"class indices must lie in [0, {n}), got [{cls.min()}, {cls.max()}]")
    d = logits.data
    m = d.max(axis=1, keepdims=True)
    z = d - m
    lse = m[:, 0] + np.log(np.exp(z).sum(axis=1, dtype=np.float64)).astype(d.dtype)
    true_logit = np.take_along_axis(d, cls[:, None].astype(np.intp), axis=1)[:, 0]
    count = b * h * w
    val = (lse - true_logit).sum(dtype=np.float64) / count

    def backward(g):
        if not logits.requires_grad:
            return
        p = np.exp(d - lse[:, None])
        onehot_idx = cls[:, None].astype(np.intp)
        np.put_along_axis(
            p, onehot_idx, np.take_along_axis(p, onehot_idx, axis=1) - 1.0, axis=1
        )
        logits._accumulate(p * (g.reshape(()) / count))

    return _make(np.full((1, 1, 1, 1), val, dtype=d.dtype), (logits,), backward)


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Stable softmax over axis 1 of a raw (B, N, H, W) array."""
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=1, keepdims=True)
