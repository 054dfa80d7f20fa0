"""Edge-gated spatial attention fusion between the two task branches.

Per decoder scale, each branch produces a spatial attention map; on edge
pixels the map is amplified by a learnable factor (1 + beta * E), and each
branch's features are then modulated by the *other* branch's gated map.
Variants toggle the edge gating, the spatial attention, and an optional
channel-attention prescale so ablations share one code path.
"""

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .rng import Xorshift64Star
from .tensor import Tensor4

VARIANTS = ("MODEST_CA_SA", "MODEST_CA", "MODEST_SA", "EGSA_CA_SA", "EGSA_SA")

SA_KERNEL = 7
CA_REDUCTION = 16


def conv_weight(rng: Xorshift64Star, out_c: int, in_c: int, k: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(in_c * k * k)
    return rng.uniform_array((out_c, in_c, k, k), -bound, bound)


class FusionParams:
    """Learnable state for one decoder scale.

    All variants share one parameter set: the spatial attention convs
    (2 -> 1, 7x7, bias-free), the channel-attention bottlenecks
    (C -> C/r -> C, r = 16, bias-free), and the two edge coefficients.
    Unused parameters for a given variant simply receive zero gradient,
    which keeps checkpoints uniform across variants.
    """

    def __init__(self, channels: int, rng: Xorshift64Star, beta_init: float = 0.0):
        hidden = max(1, channels // CA_REDUCTION)
        self.channels = channels
        self.beta_s2d = T.param(np.full((1, 1, 1, 1), beta_init, dtype=np.float32))
        self.beta_d2s = T.param(np.full((1, 1, 1, 1), beta_init, dtype=np.float32))
        self.sa_seg = T.param(conv_weight(rng, 1, 2, SA_KERNEL))
        self.sa_depth = T.param(conv_weight(rng, 1, 2, SA_KERNEL))
        self.ca_seg_w1 = T.param(conv_weight(rng, hidden, channels, 1))
        self.ca_seg_w2 = T.param(conv_weight(rng, channels, hidden, 1))
        self.ca_depth_w1 = T.param(conv_weight(rng, hidden, channels, 1))
        self.ca_depth_w2 = T.param(conv_weight(rng, channels, hidden, 1))

    _FIELDS = ("beta_s2d", "beta_d2s", "sa_seg", "sa_depth",
               "ca_seg_w1", "ca_seg_w2", "ca_depth_w1", "ca_depth_w2")

    def named_parameters(self, prefix: str = ""):
        return [(prefix + name, getattr(self, name)) for name in self._FIELDS]


def spatial_attention(f: Tensor4, weight: Tensor4) -> Tensor4:
    """Sigmoid of a 7x7 conv over [channel-mean, channel-max]; one map per sample."""
    pooled = T.concat_channels([T.channel_pool(f, "mean"), T.channel_pool(f, "max")])
    return T.sigmoid(T.conv2d(pooled, weight, padding=(SA_KERNEL - 1) // 2))


def channel_attention(f: Tensor4, w1: Tensor4, w2: Tensor4) -> Tensor4:
    """Per-channel weights in (0,1): global average pool -> bottleneck -> sigmoid."""
    squeezed = T.spatial_mean(f)
    return T.sigmoid(T.conv2d(T.relu(T.conv2d(squeezed, w1)), w2))


def egsa_gate(s_s: Tensor4, s_d: Tensor4, e: Tensor4,
              beta_s2d: Tensor4, beta_d2s: Tensor4):
    """Amplify each attention map on edge pixels: S * (1 + beta * E).

    Outputs are deliberately not clamped above 1; clamping would kill the
    beta gradient exactly where the edge signal is active.
    """
    if s_s.shape[2:] != e.shape[2:] or s_d.shape[2:] != e.shape[2:]:
        raise ShapeError(
            f"attention {s_s.shape[2:]}/{s_d.shape[2:]} vs edge {e.shape[2:]}")
    e = e.detach()
    gated_seg = T.mul(s_s, T.adds(T.mul(beta_s2d, e), 1.0))
    gated_depth = T.mul(s_d, T.adds(T.mul(beta_d2s, e), 1.0))
    return gated_seg, gated_depth


def egsa_fuse(f_s: Tensor4, f_d: Tensor4, e: Tensor4,
              params: FusionParams, variant: str, cross: bool = True):
    """Fuse the two branches at one scale; returns (seg features, depth features).

    EGSA_* variants gate the attention maps with the edge map; MODEST_*
    variants use them ungated. *_CA_* variants prescale each branch by its
    channel-attention weights first. MODEST_CA has no spatial step at all
    and just exchanges the channel-weighted features. With cross=True each
    branch is modulated by the other branch's map (the default pairing);
    cross=False keeps modulation within a branch, for diagnostics.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown fusion variant {variant!r}")
    if f_s.shape != f_d.shape:
        raise ShapeError(f"branch shapes differ: {f_s.shape} vs {f_d.shape}")

    if variant in ("MODEST_CA_SA", "MODEST_CA", "EGSA_CA_SA"):
        f_s = T.mul(f_s, channel_attention(f_s, params.ca_seg_w1, params.ca_seg_w2))
        f_d = T.mul(f_d, channel_attention(f_d, params.ca_depth_w1, params.ca_depth_w2))

    if variant == "MODEST_CA":
        return (f_d, f_s) if cross else (f_s, f_d)

    s_s = spatial_attention(f_s, params.sa_seg)
    s_d = spatial_attention(f_d, params.sa_depth)
    if variant in ("EGSA_CA_SA", "EGSA_SA"):
        gated_seg, gated_depth = egsa_gate(s_s, s_d, e,
                                           params.beta_s2d, params.beta_d2s)
    else:
        gated_seg, gated_depth = s_s, s_d

    if cross:
        return T.mul(f_s, gated_depth), T.mul(f_d, gated_seg)
    return T.mul(f_s, gated_seg), T.mul(f_d, gated_depth)


def fusion_backward_check(params: FusionParams, f_s: Tensor4, f_d: Tensor4,
                          e: Tensor4, variant: str = "EGSA_SA",
                          eps: float = 1e-3) -> float:
    """Max relative error of analytic vs central-difference gradients
    through egsa_fuse, including into the beta coefficients.

    Inputs and parameters must be float64 for the finite differences to
    resolve the tolerance.
    """
    from .gradcheck import max_rel_error

    def loss_fn():
        out_s, out_d = egsa_fuse(f_s, f_d, e, params, variant)
        return T.add(T.mean_all(T.mul(out_s, out_s)),
                     T.mean_all(T.mul(out_d, out_d)))

    leaves = [f_s, f_d] + [t for _, t in params.named_parameters()]
    return max_rel_error(loss_fn, leaves, eps=eps)
