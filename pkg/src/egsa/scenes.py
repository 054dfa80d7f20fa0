"""Procedural desk-scale scenes with opaque and transparent objects, plus
bit-exact dataset I/O.

All randomness comes from one Xorshift64Star stream per scene, consumed in
a fixed order so a seed pins every byte of output:

  1. background RGB: three 5x5 grids, channel by channel
  2. background depth: one 5x5 grid
  3. transparency flags: round(num_objects * transparent_fraction) ones,
     shuffled over the object list
  4. per object: kind bit, geometry, depth, color triplet, alpha,
     bounding-box noise (alpha and noise are drawn for every object but
     only alpha of transparent and noise of opaque objects are rendered,
     keeping the draw sequence independent of the flags' meaning)

Objects are constant-depth primitives drawn in [0.5, 0.9 * depth_max], a
band strictly in front of the background ([0.93, 1.0] * depth_max), so
every object is visible unless another object occludes it.
"""

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, FormatError
from .rng import Xorshift64Star, sample_seed
from .tensor import Tensor4

NUM_CLASSES = 3  # 0 background, 1 opaque, 2 transparent

DEPTH_FLOOR = 0.1
_BG_GRID = 5
_NOISE_AMP = 0.05
_RIM_GAIN = 0.1
_PLACEMENT_RETRIES = 8

DMAP_MAGIC = b"DMAP"


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 64
    num_objects: int = 4
    transparent_fraction: float = 0.5
    depth_max: float = 2.0

    def __post_init__(self):
        if self.height < 32 or self.width < 32:
            raise ConfigError("image dims must be at least 32x32")
        if self.num_objects < 0:
            raise ConfigError("num_objects must be non-negative")
        if not 0.0 <= self.transparent_fraction <= 1.0:
            raise ConfigError("transparent_fraction must lie in [0, 1]")
        if self.depth_max < 1.0:
            raise ConfigError("depth_max must be at least 1")


@dataclass(frozen=True)
class Primitive:
    kind: str          # "rect" or "circle"
    geometry: tuple    # rect: (r0, c0, r1, c1); circle: (cy, cx, radius)
    depth: float
    transparent: bool
    color: tuple
    alpha: float
    noise: np.ndarray  # luminance jitter over the bounding box

    def mask(self, h: int, w: int) -> np.ndarray:
        out = np.zeros((h, w), dtype=bool)
        if self.kind == "rect":
            r0, c0, r1, c1 = self.geometry
            out[r0:r1, c0:c1] = True
        else:
            cy, cx, radius = self.geometry
            rr, cc = np.ogrid[:h, :w]
            out[(rr - cy) ** 2 + (cc - cx) ** 2 <= radius ** 2] = True
        return out

    def bounding_box(self) -> tuple:
        if self.kind == "rect":
            r0, c0, r1, c1 = self.geometry
            return r0, c0, r1, c1
        cy, cx, radius = self.geometry
        return cy - radius, cx - radius, cy + radius + 1, cx + radius + 1


@dataclass(frozen=True)
class ScenePlan:
    seed: int
    config: SceneConfig
    bg_rgb: np.ndarray    # (3, H, W) float64
    bg_depth: np.ndarray  # (H, W) float64
    primitives: tuple


@dataclass
class Scene:
    rgb: Tensor4        # (1, 3, H, W) in [0, 1], quantized to the 8-bit grid
    depth_gt: Tensor4   # (1, 1, H, W) in [DEPTH_FLOOR, depth_max]
    seg_gt: np.ndarray  # (H, W) uint8 class indices
    seed: int

    def __post_init__(self):
        h, w = self.seg_gt.shape
        if self.rgb.shape != (1, 3, h, w) or self.depth_gt.shape != (1, 1, h, w):
            raise DataError("scene field shapes disagree")
        if not np.isin(self.seg_gt, (0, 1, 2)).all():
            raise DataError("segmentation classes must be 0, 1, or 2")
        if self.depth_gt.data.min() < DEPTH_FLOOR:
            raise DataError(f"depth below the {DEPTH_FLOOR} floor")

    @property
    def transparency_mask(self) -> np.ndarray:
        return self.seg_gt == 2


def _smooth_field(rng: Xorshift64Star, h: int, w: int,
                  lo: float, hi: float) -> np.ndarray:
    """Corner-aligned bilinear upsample of a coarse uniform grid."""
    coarse = rng.uniform_array((_BG_GRID, _BG_GRID)).astype(np.float64)
    ys = np.linspace(0.0, _BG_GRID - 1, h)
    xs = np.linspace(0.0, _BG_GRID - 1, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, _BG_GRID - 1)
    x1 = np.minimum(x0 + 1, _BG_GRID - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    field = (coarse[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
             + coarse[np.ix_(y1, x0)] * fy * (1 - fx)
             + coarse[np.ix_(y0, x1)] * (1 - fy) * fx
             + coarse[np.ix_(y1, x1)] * fy * fx)
    return lo + (hi - lo) * field


def _fit_span(rng: Xorshift64Star, extent: int, lo: int, hi: int) -> int:
    """Draw a span that fits inside extent, shrinking the cap on retries."""
    hi = max(lo, hi)
    for _ in range(_PLACEMENT_RETRIES):
        span = lo + rng.randint(hi - lo + 1)
        if span <= extent:
            return span
        hi = max(lo, hi // 2)
    raise DataError(f"cannot fit a primitive of span >= {lo} in extent {extent}")


def plan_scene(seed: int, config: SceneConfig) -> ScenePlan:
    """Draw all random choices for one scene (rendering is deterministic)."""
    rng = Xorshift64Star(seed)
    h, w = config.height, config.width
    bg_rgb = np.stack([_smooth_field(rng, h, w, 0.35, 0.65) for _ in range(3)])
    bg_depth = _smooth_field(rng, h, w, 0.93 * config.depth_max, config.depth_max)

    n = config.num_objects
    n_transparent = int(round(n * config.transparent_fraction))
    flags = [True] * n_transparent + [False] * (n - n_transparent)
    rng.shuffle(flags)

    min_side = min(h, w)
    prims = []
    for transparent in flags:
        kind = "rect" if rng.randint(2) == 0 else "circle"
        if kind == "rect":
            span_h = _fit_span(rng, h, 6, min_side // 3)
            span_w = _fit_span(rng, w, 6, min_side // 3)
            r0 = rng.randint(h - span_h + 1)
            c0 = rng.randint(w - span_w + 1)
            geometry = (r0, c0, r0 + span_h, c0 + span_w)
            box = (span_h, span_w)
        else:
            radius = _fit_span(rng, min_side // 2, 4, min_side // 4)
            cy = radius + rng.randint(h - 2 * radius)
            cx = radius + rng.randint(w - 2 * radius)
            geometry = (cy, cx, radius)
            box = (2 * radius + 1, 2 * radius + 1)
        depth = rng.uniform_range(0.5, 0.9 * config.depth_max)
        color = tuple(rng.uniform_range(0.1, 0.9) for _ in range(3))
        alpha = rng.uniform_range(0.1, 0.3)
        noise = rng.uniform_array(box, -_NOISE_AMP, _NOISE_AMP).astype(np.float64)
        prims.append(Primitive(kind=kind, geometry=geometry, depth=depth,
                               transparent=transparent, color=color,
                               alpha=alpha, noise=noise))
    return ScenePlan(seed=seed, config=config, bg_rgb=bg_rgb,
                     bg_depth=bg_depth, primitives=tuple(prims))


def render_scene(plan: ScenePlan) -> Scene:
    """Paint primitives far to near so the nearest surface wins each pixel.

    Transparent objects blend the background texture (alpha in [0.1, 0.3])
    and add a 1-pixel brightened rim, so their RGB footprint is faint while
    depth and segmentation record them fully.
    """
    cfg = plan.config
    h, w = cfg.height, cfg.width
    rgb = plan.bg_rgb.copy()
    depth = plan.bg_depth.copy()
    seg = np.zeros((h, w), dtype=np.uint8)

    order = sorted(range(len(plan.primitives)),
                   key=lambda i: -plan.primitives[i].depth)
    for i in order:
        prim = plan.primitives[i]
        mask = prim.mask(h, w)
        r0, c0, r1, c1 = prim.bounding_box()
        box_mask = mask[r0:r1, c0:c1]
        if prim.transparent:
            for c in range(3):
                blended = ((1.0 - prim.alpha) * plan.bg_rgb[c]
                           + prim.alpha * prim.color[c])
                rgb[c][mask] = blended[mask]
            rim = mask & ~ndimage.binary_erosion(mask)
            rgb[:, rim] += _RIM_GAIN
            seg[mask] = 2
        else:
            for c in range(3):
                layer = prim.color[c] + prim.noise
                rgb[c][r0:r1, c0:c1][box_mask] = layer[box_mask]
            seg[mask] = 1
        depth[mask] = prim.depth

    # quantize to the 8-bit grid so PPM round-trips are bit-identical
    rgb_u8 = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    rgb32 = (rgb_u8.astype(np.float32) / np.float32(255.0))[None]
    return Scene(rgb=Tensor4(rgb32),
                 depth_gt=Tensor4(depth.astype(np.float32)[None, None]),
                 seg_gt=seg, seed=plan.seed)


def generate_scene(seed: int, config: SceneConfig) -> Scene:
    return render_scene(plan_scene(seed, config))


# -- file formats --------------------------------------------------------------

def _parse_pnm_header(data: bytes, magic: bytes, path) -> tuple:
    if data[:2] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} header", offset=0)
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header", offset=pos)
        fields.append(data[start:pos])
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError:
        raise FormatError(f"{path}: non-numeric header field", offset=pos) from None
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255", offset=pos)
    return width, height, pos + 1


def write_ppm(path, rgb_u8: np.ndarray) -> None:
    """rgb_u8: (3, H, W) uint8, stored interleaved row-major."""
    _, h, w = rgb_u8.shape
    payload = np.ascontiguousarray(rgb_u8.transpose(1, 2, 0)).tobytes()
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + payload)


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, offset = _parse_pnm_header(data, b"P6", path)
    expected = offset + 3 * h * w
    if len(data) != expected:
        raise FormatError(f"{path}: payload is {len(data) - offset} bytes, "
                          f"need {3 * h * w}", offset=min(len(data), expected))
    flat = np.frombuffer(data, dtype=np.uint8, count=3 * h * w, offset=offset)
    return flat.reshape(h, w, 3).transpose(2, 0, 1).copy()


def write_pgm(path, gray_u8: np.ndarray) -> None:
    h, w = gray_u8.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h)
                           + np.ascontiguousarray(gray_u8).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, offset = _parse_pnm_header(data, b"P5", path)
    expected = offset + h * w
    if len(data) != expected:
        raise FormatError(f"{path}: payload is {len(data) - offset} bytes, "
                          f"need {h * w}", offset=min(len(data), expected))
    return np.frombuffer(data, dtype=np.uint8, count=h * w,
                         offset=offset).reshape(h, w).copy()


def write_dmap(path, depth: np.ndarray) -> None:
    """Depth plane as magic DMAP, u32 height/width, u32 CRC32, f32 LE pixels."""
    h, w = depth.shape
    payload = np.ascontiguousarray(depth.astype("<f4")).tobytes()
    header = DMAP_MAGIC + struct.pack("<III", h, w, zlib.crc32(payload) & 0xFFFFFFFF)
    Path(path).write_bytes(header + payload)


def read_dmap(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise FormatError(f"{path}: header needs 16 bytes", offset=len(data))
    if data[:4] != DMAP_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}", offset=0)
    h, w, crc = struct.unpack("<III", data[4:16])
    expected = 16 + 4 * h * w
    if len(data) != expected:
        raise FormatError(f"{path}: payload is {len(data) - 16} bytes, "
                          f"need {4 * h * w}", offset=min(len(data), expected))
    payload = data[16:]
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise FormatError(f"{path}: checksum mismatch", offset=16)
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float32)


# -- scene and dataset I/O ------------------------------------------------------

def write_scene(scene: Scene, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rgb_u8 = np.round(scene.rgb.data[0] * 255.0).astype(np.uint8)
    write_ppm(directory / "rgb.ppm", rgb_u8)
    write_dmap(directory / "depth.dmap", scene.depth_gt.data[0, 0])
    write_pgm(directory / "seg.pgm", scene.seg_gt)
    (directory / "meta.txt").write_text(f"seed = {scene.seed}\n", encoding="utf-8")


def read_scene(directory) -> Scene:
    directory = Path(directory)
    rgb_u8 = read_ppm(directory / "rgb.ppm")
    depth = read_dmap(directory / "depth.dmap")
    seg = read_pgm(directory / "seg.pgm")
    meta = (directory / "meta.txt").read_text(encoding="utf-8")
    seed = None
    for line in meta.splitlines():
        key, _, value = line.partition("=")
        if key.strip() == "seed":
            seed = int(value.strip())
    if seed is None:
        raise FormatError(f"{directory}/meta.txt: missing seed")
    rgb32 = (rgb_u8.astype(np.float32) / np.float32(255.0))[None]
    return Scene(rgb=Tensor4(rgb32), depth_gt=Tensor4(depth[None, None]),
                 seg_gt=seg.astype(np.uint8), seed=seed)


@dataclass(frozen=True)
class DatasetManifest:
    height: int
    width: int
    num_classes: int
    train_entries: tuple
    test_entries: tuple

    @property
    def entries(self) -> tuple:
        return self.train_entries + self.test_entries


def generate_dataset(seed: int, config: SceneConfig, n_train: int,
                     n_test: int, out_dir) -> DatasetManifest:
    """Write train/ and test/ sample directories plus manifest.txt.

    Per-sample seeds are seed XOR splitmix64((split_id << 32) | index), so
    the two splits never collide and any sample can be regenerated alone.
    """
    if n_train < 1 or n_test < 1:
        raise ConfigError("need at least one sample per split")
    out_dir = Path(out_dir)
    splits = (("train", n_train), ("test", n_test))
    entries = {"train": [], "test": []}
    for split, count in splits:
        for i in range(count):
            scene = generate_scene(sample_seed(seed, split, i), config)
            entry = f"{split}/sample_{i:05d}"
            write_scene(scene, out_dir / entry)
            entries[split].append(entry)
    manifest = DatasetManifest(height=config.height, width=config.width,
                               num_classes=NUM_CLASSES,
                               train_entries=tuple(entries["train"]),
                               test_entries=tuple(entries["test"]))
    lines = [f"# height = {manifest.height}",
             f"# width = {manifest.width}",
             f"# classes = {manifest.num_classes}",
             f"# train = {n_train}",
             f"# test = {n_test}"]
    lines.extend(manifest.entries)
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n",
                                          encoding="utf-8")
    return manifest


def read_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.txt"
    if not path.exists():
        raise FormatError(f"{path}: no manifest")
    header = {}
    entries = {"train": [], "test": []}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            header[key.strip()] = int(value.strip())
            continue
        split = line.split("/", 1)[0]
        if split not in entries:
            raise FormatError(f"{path}: unknown split in entry {line!r}")
        entries[split].append(line)
        sample_dir = root / line
        for name in ("rgb.ppm", "depth.dmap", "seg.pgm", "meta.txt"):
            if not (sample_dir / name).exists():
                raise FormatError(f"{sample_dir / name}: referenced file missing")
    for key in ("height", "width", "classes", "train", "test"):
        if key not in header:
            raise FormatError(f"{path}: missing header line for {key}")
    if len(entries["train"]) != header["train"] or len(entries["test"]) != header["test"]:
        raise FormatError(f"{path}: entry counts disagree with header")
    return DatasetManifest(height=header["height"], width=header["width"],
                           num_classes=header["classes"],
                           train_entries=tuple(entries["train"]),
                           test_entries=tuple(entries["test"]))


def load_split(root, manifest: DatasetManifest, split: str) -> list:
    names = {"train": manifest.train_entries, "test": manifest.test_entries}[split]
    return [read_scene(Path(root) / entry) for entry in names]
