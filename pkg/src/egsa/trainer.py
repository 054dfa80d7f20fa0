"""Training: progressive edge schedule, split-rate Adam, checkpoint I/O.

The edge curriculum feeds RGB-derived edges to the fusion blocks while the
depth branch is still unreliable (epoch < warmup) and switches to edges of
the model's own predicted depth afterwards — predictions are probed with a
gradient-free forward pass per batch so the edges track the current weights.
An optional blend window linearly mixes the two binary sources and
re-binarizes at 0.5 (majority vote per pixel); it is off by default.

Checkpoints are little-endian binary: magic ``EGSA``, a format version, the
64-bit config hash, then named dtype-tagged blocks (parameters, optimizer
moments, counters) with a trailing CRC32 over everything before it. Writes
go to a temp file first and are renamed into place.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import fnv1a64, format_value
from .edges import (DEFAULT_HIGH, DEFAULT_LOW, DEFAULT_SIGMA, DEPTH_SOURCE,
                    RGB_SOURCE, EdgePyramid, build_pyramid, canny,
                    depth_to_edges, rgb_to_gray, zero_pyramid)
from .errors import CheckpointError, ConfigError, TrainingError
from .losses import (LossWeights, depth_loss, downsample_depth,
                     downsample_labels, seg_loss, total_loss)
from .metrics import MetricReport, evaluate_report
from .model import Model, ModelConfig
from .rng import Xorshift64Star
from .tensor import Tensor4

EPOCH_LOG_HEADER = ("epoch,edge_source,train_loss,delta_105,delta_110,"
                    "delta_125,rmse,mae,rel,map_50,miou")
NO_EDGE_TAG = "none"  # log tag for variants that never extract edges

CHECKPOINT_MAGIC = b"EGSA"
CHECKPOINT_VERSION = 1


# -- configuration ---------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = ModelConfig()
    epochs: int = 20
    batch_size: int = 4
    warmup: int = 5          # epochs of RGB edges before predicted-depth edges
    blend_epochs: int = 0
    lr_encoder: float = 1e-5
    lr_decoder: float = 3e-4
    loss: LossWeights = LossWeights()
    canny_sigma: float = DEFAULT_SIGMA
    canny_low: float = DEFAULT_LOW
    canny_high: float = DEFAULT_HIGH
    eval_every: int = 0      # 0: no per-epoch test metrics in the log

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.warmup < 0 or self.blend_epochs < 0 or self.eval_every < 0:
            raise ConfigError("schedule counters must be non-negative")
        if self.lr_encoder <= 0 or self.lr_decoder <= 0:
            raise ConfigError("learning rates must be positive")

    @classmethod
    def from_run(cls, run_config) -> "TrainConfig":
        """Build from a RunConfig (config.py) keeping hashes consistent."""
        return cls(
            model=run_config.model_config(),
            epochs=run_config["train.epochs"],
            batch_size=run_config["train.batch"],
            warmup=run_config["schedule.T"],
            blend_epochs=run_config["schedule.blend_epochs"],
            lr_encoder=run_config["train.lr_encoder"],
            lr_decoder=run_config["train.lr_decoder"],
            loss=LossWeights(alpha=run_config["loss.alpha"],
                             beta_seg=run_config["loss.beta_seg"]),
            canny_sigma=run_config["canny.sigma"],
            canny_low=run_config["canny.low"],
            canny_high=run_config["canny.high"],
            eval_every=run_config["train.eval_every"],
        )

    def config_lines(self) -> list:
        """Canonical key = value lines for everything the checkpoint
        semantics depend on (dataset content is identified separately)."""
        m = self.model
        pairs = (
            ("data.height", m.height),
            ("data.width", m.width),
            ("canny.sigma", self.canny_sigma),
            ("canny.low", self.canny_low),
            ("canny.high", self.canny_high),
            ("model.encoder_channels", m.encoder_channels),
            ("model.decoder_channels", m.decoder_channels),
            ("model.num_scales", m.num_scales),
            ("model.num_iterations", m.num_iterations),
            ("model.num_classes", m.num_classes),
            ("fusion.variant", m.variant),
            ("fusion.beta_init", m.beta_init),
            ("fusion.cross", m.cross),
            ("loss.alpha", self.loss.alpha),
            ("loss.beta_seg", self.loss.beta_seg),
            ("schedule.T", self.warmup),
            ("schedule.blend_epochs", self.blend_epochs),
            ("train.epochs", self.epochs),
            ("train.batch", self.batch_size),
            ("train.lr_encoder", self.lr_encoder),
            ("train.lr_decoder", self.lr_decoder),
            ("train.eval_every", self.eval_every),
        )
        return [f"{key} = {format_value(value)}" for key, value in pairs]

    def config_hash(self) -> int:
        return fnv1a64("\n".join(self.config_lines()) + "\n")

    @property
    def uses_edges(self) -> bool:
        return self.model.variant.startswith("EGSA")


# -- schedule ----------------------------------------------------------------

def edge_source_tag(epoch: int, warmup: int) -> str:
    """Which edge source the schedule prescribes for this epoch."""
    return RGB_SOURCE if epoch < warmup else DEPTH_SOURCE


def blend_weight(epoch: int, warmup: int, blend_epochs: int) -> float:
    """Weight of predicted-depth edges in the optional blend window.

    0 before the warmup boundary, 1 from warmup + blend_epochs on, and a
    linear ramp strictly inside (0, 1) across the window.
    """
    if epoch < warmup:
        return 0.0
    if blend_epochs <= 0 or epoch >= warmup + blend_epochs:
        return 1.0
    return (epoch - warmup + 1) / (blend_epochs + 1)


@dataclass(frozen=True)
class TrainState:
    epoch: int = 0      # epochs completed
    warmup: int = 5
    step: int = 0       # optimizer steps taken
    rng_state: int = 0  # run generator state after training

    @property
    def edge_source(self) -> str:
        """Source the schedule prescribes for epoch index ``epoch``."""
        return edge_source_tag(self.epoch, self.warmup)


def terminal_edge_source(state: TrainState) -> str:
    """Edge source of the last trained epoch (RGB for an untrained model)."""
    return edge_source_tag(max(state.epoch - 1, 0), state.warmup)


# -- optimizer ---------------------------------------------------------------

class Adam:
    """Adam with bias correction and two name-keyed learning-rate groups:
    parameters whose name starts with ``encoder.`` use lr_encoder, all
    others (decoder, heads, fusion coefficients) use lr_decoder."""

    def __init__(self, params, lr_encoder: float = 1e-5,
                 lr_decoder: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr_encoder = lr_encoder
        self.lr_decoder = lr_decoder
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def learning_rate(self, name: str) -> float:
        return self.lr_encoder if name.startswith("encoder.") else self.lr_decoder

    def step(self):
        """One update from the gradients currently stored on the parameters.

        A parameter with no gradient (off the graph this step, e.g. unused
        variant weights) only has its moments decayed.
        """
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            m, v = self.m[name], self.v[name]
            if g is None:
                m *= self.beta1
                v *= self.beta2
            else:
                if not np.isfinite(g).all():
                    raise TrainingError(
                        f"non-finite gradient in parameter '{name}' "
                        f"at optimizer step {t}")
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= self.learning_rate(name) * update


# -- edge pyramids for a batch ------------------------------------------------

def edge_source_pyramid(epoch: int, warmup: int, scene, model: Model,
                        sigma: float = DEFAULT_SIGMA, low: float = DEFAULT_LOW,
                        high: float = DEFAULT_HIGH) -> EdgePyramid:
    """Single-scene schedule step: RGB Canny before warmup, edges of the
    model's own predicted depth (gradient-free probe forward) after."""
    dims = model.config.scale_dims
    if epoch < warmup:
        edge = canny(rgb_to_gray(scene.rgb), sigma, low, high)
        return build_pyramid(edge, dims, source=RGB_SOURCE)
    with T.no_grad():
        out = model.forward(scene.rgb, zero_pyramid(dims, DEPTH_SOURCE))
    edge = depth_to_edges(out.depth, sigma, low, high)
    return build_pyramid(edge, dims, source=DEPTH_SOURCE)


def _stack_pyramids(pyramids, source: str) -> EdgePyramid:
    n_levels = len(pyramids[0])
    levels = tuple(
        Tensor4(np.concatenate([p.levels[k].data for p in pyramids]))
        for k in range(n_levels))
    return EdgePyramid(levels=levels, source=source)


def _rgb_edge_map(scene, config: TrainConfig) -> Tensor4:
    return canny(rgb_to_gray(scene.rgb), config.canny_sigma,
                 config.canny_low, config.canny_high)


def _depth_edge_maps(model: Model, rgb_batch: Tensor4,
                     config: TrainConfig) -> list:
    """Per-sample edge maps of the model's current depth predictions."""
    dims = model.config.scale_dims
    with T.no_grad():
        out = model.forward(rgb_batch, zero_pyramid(dims, DEPTH_SOURCE))
    return [depth_to_edges(Tensor4(out.depth.data[i:i + 1]),
                           config.canny_sigma, config.canny_low,
                           config.canny_high)
            for i in range(rgb_batch.batch)]


def _batch_pyramid(model: Model, config: TrainConfig, epoch: int,
                   rgb_batch: Tensor4, rgb_maps) -> EdgePyramid:
    """Edge pyramid for one batch according to the schedule (and blend)."""
    dims = model.config.scale_dims
    if not config.uses_edges:
        return zero_pyramid(dims, RGB_SOURCE)
    source = edge_source_tag(epoch, config.warmup)
    w = blend_weight(epoch, config.warmup, config.blend_epochs)
    if w == 0.0:
        maps = rgb_maps
    elif w == 1.0:
        maps = _depth_edge_maps(model, rgb_batch, config)
    else:
        depth_maps = _depth_edge_maps(model, rgb_batch, config)
        maps = [Tensor4((((1.0 - w) * r.data + w * d.data) >= 0.5)
                        .astype(np.float32))
                for r, d in zip(rgb_maps, depth_maps)]
    return _stack_pyramids(
        [build_pyramid(m, dims, source=source) for m in maps], source)


# -- loss over a batch --------------------------------------------------------

def _scale_targets(scenes, scale_dims):
    """Per-scene ground truth downsampled to every decoder scale."""
    targets = []
    for scene in scenes:
        per_scale = []
        labels = scene.seg_gt[None].astype(np.int64)
        for hk, wk in scale_dims:
            with T.no_grad():
                depth_small = downsample_depth(scene.depth_gt, hk, wk).data
            per_scale.append((depth_small, downsample_labels(labels, hk, wk)))
        targets.append(per_scale)
    return targets


def _batch_loss(output, chunk, targets, scale_dims, weights: LossWeights):
    depth_terms, seg_terms = [], []
    for preds in output.stage_preds:
        for k, (pred_depth, pred_seg) in enumerate(preds):
            depth_gt = Tensor4(np.concatenate(
                [targets[i][k][0] for i in chunk]))
            seg_gt = np.concatenate([targets[i][k][1] for i in chunk])
            depth_terms.append(depth_loss(pred_depth, depth_gt))
            seg_terms.append(seg_loss(pred_seg, seg_gt))
    return total_loss(depth_terms, seg_terms, weights)


def _stack_rgb(scenes, chunk) -> Tensor4:
    return Tensor4(np.concatenate([scenes[i].rgb.data for i in chunk]))


def dataset_loss(model: Model, scenes, config: TrainConfig,
                 epoch: int = 0) -> float:
    """Mean training loss over a dataset without updating parameters."""
    targets = _scale_targets(scenes, model.config.scale_dims)
    rgb_cache = ([_rgb_edge_map(s, config) for s in scenes]
                 if config.uses_edges else None)
    total = 0.0
    for start in range(0, len(scenes), config.batch_size):
        chunk = list(range(start, min(start + config.batch_size, len(scenes))))
        rgb = _stack_rgb(scenes, chunk)
        maps = [rgb_cache[i] for i in chunk] if rgb_cache else None
        with T.no_grad():
            pyramid = _batch_pyramid(model, config, epoch, rgb, maps)
            output = model.forward(rgb, pyramid)
            loss = _batch_loss(output, chunk, targets,
                               model.config.scale_dims, config.loss)
        total += float(loss.data.ravel()[0]) * len(chunk)
    return total / len(scenes)


# -- training loop -------------------------------------------------------------

@dataclass
class TrainResult:
    model: Model
    optimizer: Adam
    state: TrainState
    log_rows: list = field(default_factory=list)   # CSV rows, no header
    reports: list = field(default_factory=list)    # (epoch, MetricReport)


def _log_row(epoch: int, tag: str, train_loss: float, report) -> str:
    if report is None:
        cells = [""] * 8
    else:
        cells = [f"{v:.6f}" for v in (
            report.delta_105, report.delta_110, report.delta_125,
            report.rmse, report.mae, report.rel,
            report.map_50, report.miou)]
    return ",".join([str(epoch), tag, f"{train_loss:.6f}"] + cells)


def train(config: TrainConfig, scenes, seed: int,
          test_scenes=None) -> TrainResult:
    """Deterministic training run: given (config, scenes, seed) the returned
    parameters, optimizer moments, and log rows are bit-reproducible."""
    if not scenes:
        raise ConfigError("training set is empty")
    rng = Xorshift64Star(seed)
    model = Model(config.model, rng)
    opt = Adam(model.params, lr_encoder=config.lr_encoder,
               lr_decoder=config.lr_decoder)
    scale_dims = config.model.scale_dims

    targets = _scale_targets(scenes, scale_dims)
    rgb_cache = ([_rgb_edge_map(s, config) for s in scenes]
                 if config.uses_edges else None)

    order = list(range(len(scenes)))
    result = TrainResult(model=model, optimizer=opt,
                         state=TrainState(epoch=0, warmup=config.warmup))
    for epoch in range(config.epochs):
        rng.shuffle(order)
        tag = (edge_source_tag(epoch, config.warmup)
               if config.uses_edges else NO_EDGE_TAG)
        running = 0.0
        for start in range(0, len(order), config.batch_size):
            chunk = order[start:start + config.batch_size]
            rgb = _stack_rgb(scenes, chunk)
            maps = [rgb_cache[i] for i in chunk] if rgb_cache else None
            pyramid = _batch_pyramid(model, config, epoch, rgb, maps)
            output = model.forward(rgb, pyramid)
            loss = _batch_loss(output, chunk, targets, scale_dims, config.loss)
            value = float(loss.data.ravel()[0])
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite training loss at epoch {epoch}")
            model.zero_grads()
            loss.backward()
            opt.step()
            running += value * len(chunk)
        train_loss = running / len(order)

        report = None
        if (config.eval_every and test_scenes
                and (epoch + 1) % config.eval_every == 0):
            mode = (edge_source_tag(epoch, config.warmup)
                    if config.uses_edges else None)
            report = evaluate(model, test_scenes, mode, config=config)
            result.reports.append((epoch, report))
        result.log_rows.append(_log_row(epoch, tag, train_loss, report))

    result.state = TrainState(epoch=config.epochs, warmup=config.warmup,
                              step=opt.step_count, rng_state=rng.state)
    return result


# -- evaluation ----------------------------------------------------------------

def evaluate(model: Model, scenes, edge_mode,
             config: TrainConfig | None = None, batch_size: int = 4,
             strict_transparent: bool = False) -> MetricReport:
    """Metric report over a test set with a fixed edge source.

    ``edge_mode`` is "RGB", "Depth", or None (no edge extraction — used by
    fusion variants without edge gating). Gradients are disabled throughout.
    """
    if not scenes:
        raise ConfigError("evaluation set is empty")
    if config is None:
        config = TrainConfig(model=model.config)
    dims = model.config.scale_dims
    depth_preds, depth_gts, seg_probs, seg_gts, masks = [], [], [], [], []
    for start in range(0, len(scenes), batch_size):
        group = scenes[start:start + batch_size]
        chunk = list(range(len(group)))
        rgb = _stack_rgb(group, chunk)
        if edge_mode is None:
            pyramid = zero_pyramid(dims, RGB_SOURCE)
        elif edge_mode == RGB_SOURCE:
            maps = [_rgb_edge_map(s, config) for s in group]
            pyramid = _stack_pyramids(
                [build_pyramid(m, dims, source=RGB_SOURCE) for m in maps],
                RGB_SOURCE)
        elif edge_mode == DEPTH_SOURCE:
            maps = _depth_edge_maps(model, rgb, config)
            pyramid = _stack_pyramids(
                [build_pyramid(m, dims, source=DEPTH_SOURCE) for m in maps],
                DEPTH_SOURCE)
        else:
            raise ConfigError(f"unknown edge mode {edge_mode!r}")
        with T.no_grad():
            output = model.forward(rgb, pyramid)
        probs = T.softmax_probs(output.seg_logits.data)
        for i, scene in enumerate(group):
            depth_preds.append(output.depth.data[i, 0])
            depth_gts.append(scene.depth_gt.data[0, 0])
            seg_probs.append(probs[i])
            seg_gts.append(scene.seg_gt)
            masks.append(scene.transparency_mask)
    return evaluate_report(depth_preds, depth_gts, seg_probs, seg_gts,
                           transparent_masks=masks,
                           num_classes=model.config.num_classes,
                           strict_transparent=strict_transparent,
                           edge_source=edge_mode)


def evaluation_edge_mode(config: TrainConfig, state: TrainState):
    """Edge source evaluation should use for a trained checkpoint: the
    terminal schedule source, or None for variants without edge gating."""
    return terminal_edge_source(state) if config.uses_edges else None


# -- checkpoint I/O --------------------------------------------------------------

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1,
                np.dtype(np.uint64): 2}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<u8")}
_MASK64 = (1 << 64) - 1


def _checkpoint_blocks(model: Model, optimizer: Adam, state: TrainState):
    blocks = []
    for name, p in model.params.items():
        blocks.append((f"param/{name}", p.data))
    for name in model.params:
        blocks.append((f"adam.m/{name}", optimizer.m[name]))
    for name in model.params:
        blocks.append((f"adam.v/{name}", optimizer.v[name]))
    counters = (("state/epoch", state.epoch), ("state/warmup", state.warmup),
                ("state/step", state.step), ("state/rng", state.rng_state))
    for name, value in counters:
        blocks.append((name, np.array(value & _MASK64, dtype=np.uint64)))
    return blocks


def save_checkpoint(path, model: Model, optimizer: Adam, state: TrainState,
                    config_hash: int) -> None:
    """Atomic write: serialize to <path>.tmp, then rename onto <path>."""
    payload = bytearray()
    payload += CHECKPOINT_MAGIC
    payload += struct.pack("<I", CHECKPOINT_VERSION)
    payload += struct.pack("<Q", config_hash & _MASK64)
    blocks = _checkpoint_blocks(model, optimizer, state)
    payload += struct.pack("<I", len(blocks))
    for name, array in blocks:
        encoded = name.encode("utf-8")
        dtype = np.dtype(array.dtype)
        payload += struct.pack("<I", len(encoded))
        payload += encoded
        payload += struct.pack("<B", _DTYPE_CODES[dtype])
        payload += struct.pack("<I", array.ndim)
        payload += struct.pack(f"<{array.ndim}I", *array.shape)
        payload += np.ascontiguousarray(
            array, dtype=_CODE_DTYPES[_DTYPE_CODES[dtype]]).tobytes()
    payload += struct.pack("<I", zlib.crc32(bytes(payload)) & 0xFFFFFFFF)

    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(payload))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise CheckpointError(
                f"truncated checkpoint at byte offset {self.offset}")
        chunk = self.blob[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def _parse_checkpoint(blob: bytes):
    if len(blob) < 16:
        raise CheckpointError("checkpoint too short to hold a header")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CheckpointError(
            f"checksum mismatch: stored {stored_crc:#010x}, "
            f"computed {actual_crc:#010x}")
    reader = _Reader(blob[:-4])
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config_hash = struct.unpack("<Q", reader.take(8))[0]
    count = reader.u32()
    blocks = {}
    for _ in range(count):
        name = reader.take(reader.u32()).decode("utf-8")
        code = reader.u8()
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"unknown dtype code {code} in '{name}'")
        ndim = reader.u32()
        shape = tuple(reader.u32() for _ in range(ndim))
        dtype = _CODE_DTYPES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        data = np.frombuffer(reader.take(n_bytes), dtype=dtype).reshape(shape)
        blocks[name] = data.copy()
    if reader.offset != len(reader.blob):
        raise CheckpointError(
            f"{len(reader.blob) - reader.offset} trailing bytes after blocks")
    return config_hash, blocks


def _take_block(blocks: dict, name: str, like: np.ndarray) -> np.ndarray:
    if name not in blocks:
        raise CheckpointError(f"checkpoint is missing block '{name}'")
    array = blocks.pop(name)
    if array.shape != like.shape:
        raise CheckpointError(
            f"block '{name}' has shape {array.shape}, expected {like.shape}")
    return array.astype(like.dtype, copy=False)


def load_checkpoint(path, model: Model, optimizer: Adam | None = None,
                    expected_hash: int | None = None):
    """Restore parameters (and moments) in place; returns (TrainState, hash).

    Raises CheckpointError on magic/version/CRC/config-hash mismatch and on
    any missing, extra, or mis-shaped block.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    config_hash, blocks = _parse_checkpoint(blob)
    if expected_hash is not None and config_hash != (expected_hash & _MASK64):
        raise CheckpointError(
            f"config hash mismatch: checkpoint {config_hash:#018x}, "
            f"expected {expected_hash & _MASK64:#018x}")

    for name, p in model.params.items():
        p.data = _take_block(blocks, f"param/{name}", p.data).copy()
    moments_m = {name: _take_block(blocks, f"adam.m/{name}", p.data)
                 for name, p in model.params.items()}
    moments_v = {name: _take_block(blocks, f"adam.v/{name}", p.data)
                 for name, p in model.params.items()}
    counters = {}
    for key in ("state/epoch", "state/warmup", "state/step", "state/rng"):
        counters[key] = int(_take_block(blocks, key,
                                        np.array(0, dtype=np.uint64)))
    if blocks:
        raise CheckpointError(
            f"unexpected blocks in checkpoint: {sorted(blocks)}")

    if optimizer is not None:
        optimizer.m = {name: arr.copy() for name, arr in moments_m.items()}
        optimizer.v = {name: arr.copy() for name, arr in moments_v.items()}
        optimizer.step_count = counters["state/step"]
    state = TrainState(epoch=counters["state/epoch"],
                       warmup=counters["state/warmup"],
                       step=counters["state/step"],
                       rng_state=counters["state/rng"])
    return state, config_hash
