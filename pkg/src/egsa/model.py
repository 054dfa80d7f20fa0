"""Desk-scale two-branch network: a 3-stage strided-conv encoder feeding a
segmentation branch and a depth branch that are fused at every decoder
scale and refined over several coarse-to-fine iterations.

Per iteration the decoder walks the pyramid coarsest to finest: lateral
1x1 projection of the encoder feature, addition of the upsampled coarser
state, a 3x3 stage conv, then branch fusion. From the second iteration on,
a gated unit blends each scale's fresh features with the previous
iteration's (g = sigmoid(conv([prev, cur])), out = g*cur + (1-g)*prev).
Shared heads emit a softplus depth map and class logits at every scale and
iteration; full-resolution outputs are bilinear upsamples of the finest
last-iteration predictions.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .edges import EdgePyramid
from .errors import ConfigError, ShapeError
from .fusion import VARIANTS, FusionParams, conv_weight, egsa_fuse
from .rng import Xorshift64Star
from .tensor import Tensor4


@dataclass(frozen=True)
class ModelConfig:
    height: int = 64
    width: int = 64
    encoder_channels: tuple = (16, 32, 64)
    decoder_channels: int = 16
    num_scales: int = 3
    num_iterations: int = 3
    variant: str = "EGSA_SA"
    num_classes: int = 3
    cross: bool = True
    beta_init: float = 0.0

    def __post_init__(self):
        if self.num_scales != 3:
            raise ConfigError("this architecture is defined for exactly 3 scales")
        if len(self.encoder_channels) != self.num_scales:
            raise ConfigError("need one encoder width per scale")
        factor = 2 ** self.num_scales
        if self.height % factor or self.width % factor:
            raise ConfigError(f"input dims must be divisible by {factor}")
        if self.num_iterations < 1:
            raise ConfigError("num_iterations must be at least 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown fusion variant {self.variant!r}")
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")

    @property
    def scale_dims(self) -> tuple:
        """Decoder scale dims, coarsest first."""
        return tuple((self.height >> k, self.width >> k)
                     for k in range(self.num_scales, 0, -1))


@dataclass
class ModelOutput:
    depth: Tensor4       # (B, 1, H, W), positive
    seg_logits: Tensor4  # (B, N, H, W)
    stage_preds: list = field(repr=False, default_factory=list)
    # stage_preds[iteration][scale] -> (depth_k, seg_logits_k), coarsest first


# softplus(1.0) ~ 1.31: start depth predictions mid-range instead of near 0
_DEPTH_HEAD_BIAS = 1.0


class Model:
    """Parameter container plus forward pass.

    Parameter names are hierarchical: encoder.* for the backbone,
    decoder.* for branches and heads, fusion.k<scale>.* for the fusion
    blocks. The optimizer keys its learning-rate groups off the
    encoder. prefix.
    """

    def __init__(self, config: ModelConfig, rng: Xorshift64Star):
        self.config = config
        self.params: dict = {}
        dc = config.decoder_channels

        in_c = 3
        for i, out_c in enumerate(config.encoder_channels):
            self._add(f"encoder.stage{i}.w", conv_weight(rng, out_c, in_c, 3))
            self._add(f"encoder.stage{i}.b", np.zeros((1, out_c, 1, 1), np.float32))
            in_c = out_c

        enc_rev = config.encoder_channels[::-1]  # coarsest first
        for branch in ("seg", "depth"):
            for k in range(config.num_scales):
                self._add(f"decoder.{branch}.lateral{k}.w",
                          conv_weight(rng, dc, enc_rev[k], 1))
                self._add(f"decoder.{branch}.lateral{k}.b",
                          np.zeros((1, dc, 1, 1), np.float32))
                self._add(f"decoder.{branch}.stage{k}.w",
                          conv_weight(rng, dc, dc, 3))
                self._add(f"decoder.{branch}.stage{k}.b",
                          np.zeros((1, dc, 1, 1), np.float32))
                self._add(f"decoder.{branch}.gate{k}.w",
                          conv_weight(rng, dc, 2 * dc, 1))
                self._add(f"decoder.{branch}.gate{k}.b",
                          np.zeros((1, dc, 1, 1), np.float32))

        self._add("decoder.depth_head.w", conv_weight(rng, 1, dc, 1))
        self._add("decoder.depth_head.b",
                  np.full((1, 1, 1, 1), _DEPTH_HEAD_BIAS, np.float32))
        self._add("decoder.seg_head.w",
                  conv_weight(rng, config.num_classes, dc, 1))
        self._add("decoder.seg_head.b",
                  np.zeros((1, config.num_classes, 1, 1), np.float32))

        self.fusion = []
        for k in range(config.num_scales):
            fp = FusionParams(dc, rng, beta_init=config.beta_init)
            self.fusion.append(fp)
            for name, p in fp.named_parameters(f"fusion.k{k}."):
                self.params[name] = p

    def _add(self, name: str, array: np.ndarray):
        self.params[name] = T.param(array, name=name)

    def named_parameters(self):
        return list(self.params.items())

    def num_parameters(self) -> int:
        return sum(int(np.prod(p.shape)) for p in self.params.values())

    def zero_grads(self):
        for p in self.params.values():
            p.grad = None

    def _conv(self, x, name, stride=1, padding=0):
        return T.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"],
                        stride=stride, padding=padding)

    def _gated(self, prev, cur, name):
        g = T.sigmoid(self._conv(T.concat_channels([prev, cur]), name))
        keep = T.adds(T.muls(g, -1.0), 1.0)
        return T.add(T.mul(g, cur), T.mul(keep, prev))

    def forward(self, rgb: Tensor4, edges: EdgePyramid) -> ModelOutput:
        cfg = self.config
        if rgb.channels != 3 or (rgb.height, rgb.width) != (cfg.height, cfg.width):
            raise ShapeError(f"expected (B, 3, {cfg.height}, {cfg.width}) input, "
                             f"got {rgb.shape}")
        if len(edges) != cfg.num_scales:
            raise ShapeError(f"edge pyramid has {len(edges)} levels, "
                             f"need {cfg.num_scales}")
        for level, (hk, wk) in zip(edges, cfg.scale_dims):
            if (level.height, level.width) != (hk, wk):
                raise ShapeError(f"edge level {level.shape} does not match "
                                 f"scale ({hk}, {wk})")

        feats = []
        x = rgb
        for i in range(cfg.num_scales):
            x = T.relu(self._conv(x, f"encoder.stage{i}", stride=2, padding=1))
            feats.append(x)
        feats = feats[::-1]  # coarsest first

        prev_s = [None] * cfg.num_scales
        prev_d = [None] * cfg.num_scales
        stage_preds = []
        for _ in range(cfg.num_iterations):
            preds = []
            carry_s = carry_d = None
            for k, (hk, wk) in enumerate(cfg.scale_dims):
                lat_s = T.relu(self._conv(feats[k], f"decoder.seg.lateral{k}"))
                lat_d = T.relu(self._conv(feats[k], f"decoder.depth.lateral{k}"))
                if carry_s is None:
                    xs, xd = lat_s, lat_d
                else:
                    xs = T.add(T.resize_bilinear(carry_s, hk, wk), lat_s)
                    xd = T.add(T.resize_bilinear(carry_d, hk, wk), lat_d)
                cur_s = T.relu(self._conv(xs, f"decoder.seg.stage{k}", padding=1))
                cur_d = T.relu(self._conv(xd, f"decoder.depth.stage{k}", padding=1))
                cur_s, cur_d = egsa_fuse(cur_s, cur_d, edges.levels[k],
                                         self.fusion[k], cfg.variant,
                                         cross=cfg.cross)
                if prev_s[k] is not None:
                    cur_s = self._gated(prev_s[k], cur_s, f"decoder.seg.gate{k}")
                    cur_d = self._gated(prev_d[k], cur_d, f"decoder.depth.gate{k}")
                prev_s[k], prev_d[k] = cur_s, cur_d
                carry_s, carry_d = cur_s, cur_d
                depth_k = T.softplus(self._conv(cur_d, "decoder.depth_head"))
                seg_k = self._conv(cur_s, "decoder.seg_head")
                preds.append((depth_k, seg_k))
            stage_preds.append(preds)

        final_depth, final_seg = stage_preds[-1][-1]
        return ModelOutput(
            depth=T.resize_bilinear(final_depth, cfg.height, cfg.width),
            seg_logits=T.resize_bilinear(final_seg, cfg.height, cfg.width),
            stage_preds=stage_preds)


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    return Model(config, Xorshift64Star(seed))
