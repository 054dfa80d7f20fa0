"""Run configuration: a flat registry of dotted keys with typed defaults.

Config files are line-oriented UTF-8 ``key = value`` with ``#`` comments.
Command-line ``key=value`` overrides win over file values. Unknown keys are
rejected so typos fail loudly instead of silently training with defaults.
Every run can emit its fully resolved configuration, and a 64-bit FNV-1a
hash of that text identifies the configuration in checkpoints and logs.
"""

from __future__ import annotations

from .edges import DEFAULT_HIGH, DEFAULT_LOW, DEFAULT_SIGMA
from .errors import ConfigError
from .fusion import VARIANTS
from .model import ModelConfig
from .scenes import SceneConfig

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of UTF-8 text."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


# Dotted key -> default value. The default's Python type fixes the key's type.
DEFAULTS = (
    ("data.height", 64),
    ("data.width", 64),
    ("data.num_objects", 4),
    ("data.transparent_fraction", 0.5),
    ("data.depth_max", 2.0),
    ("canny.sigma", DEFAULT_SIGMA),
    ("canny.low", DEFAULT_LOW),
    ("canny.high", DEFAULT_HIGH),
    ("model.encoder_channels", (16, 32, 64)),
    ("model.decoder_channels", 16),
    ("model.num_scales", 3),
    ("model.num_iterations", 3),
    ("model.num_classes", 3),
    ("fusion.variant", "EGSA_SA"),
    ("fusion.beta_init", 0.0),
    ("fusion.cross", True),
    ("loss.alpha", 1.0),
    ("loss.beta_seg", 0.1),
    ("schedule.T", 5),
    ("schedule.blend_epochs", 0),
    ("train.epochs", 20),
    ("train.batch", 4),
    ("train.lr_encoder", 1e-5),
    ("train.lr_decoder", 3e-4),
    ("train.eval_every", 0),
)

_KEY_ORDER = tuple(key for key, _ in DEFAULTS)
_DEFAULT_MAP = dict(DEFAULTS)


def format_value(value) -> str:
    """Canonical text form of a config value (parse(format(v)) == v)."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(int(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(key: str, text: str, where: str):
    default = _DEFAULT_MAP[key]
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, tuple):
            return tuple(int(part.strip()) for part in text.split(","))
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key}: {exc}") from None


class RunConfig:
    """Immutable view over the full key set (defaults + file + overrides)."""

    def __init__(self, values: dict | None = None):
        merged = dict(DEFAULTS)
        for key, value in (values or {}).items():
            if key not in merged:
                raise ConfigError(f"unknown config key: {key}")
            merged[key] = value
        self._values = merged
        self._validate()

    def _validate(self):
        if self["fusion.variant"] not in VARIANTS:
            raise ConfigError(f"unknown fusion variant {self['fusion.variant']!r}")
        for key in ("schedule.T", "schedule.blend_epochs", "train.eval_every"):
            if self[key] < 0:
                raise ConfigError(f"{key} must be non-negative")
        if self["train.epochs"] < 0:
            raise ConfigError("train.epochs must be non-negative")
        if self["train.batch"] < 1:
            raise ConfigError("train.batch must be at least 1")
        for key in ("train.lr_encoder", "train.lr_decoder"):
            if self[key] <= 0:
                raise ConfigError(f"{key} must be positive")

    def __getitem__(self, key: str):
        try:
            return self._values[key]
        except KeyError:
            raise ConfigError(f"unknown config key: {key}") from None

    @classmethod
    def load(cls, file_text: str | None = None, overrides=()) -> "RunConfig":
        """Merge defaults <- config file text <- key=value override strings."""
        values = {}
        if file_text is not None:
            values.update(parse_config_text(file_text))
        for item in overrides:
            key, value = _split_assignment(item, "override")
            if key not in _DEFAULT_MAP:
                raise ConfigError(f"unknown config key: {key}")
            values[key] = _parse_value(key, value, "override")
        return cls(values)

    def updated(self, pairs: dict) -> "RunConfig":
        """New RunConfig with some keys replaced (values already typed)."""
        merged = dict(self._values)
        merged.update(pairs)
        return RunConfig(merged)

    def resolved_text(self) -> str:
        """Full configuration as canonical ``key = value`` lines."""
        lines = [f"{key} = {format_value(self._values[key])}"
                 for key in _KEY_ORDER]
        return "\n".join(lines) + "\n"

    def config_hash(self) -> int:
        return fnv1a64(self.resolved_text())

    # -- typed sub-configs ------------------------------------------------

    def scene_config(self) -> SceneConfig:
        return SceneConfig(
            height=self["data.height"],
            width=self["data.width"],
            num_objects=self["data.num_objects"],
            transparent_fraction=self["data.transparent_fraction"],
            depth_max=self["data.depth_max"],
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            height=self["data.height"],
            width=self["data.width"],
            encoder_channels=self["model.encoder_channels"],
            decoder_channels=self["model.decoder_channels"],
            num_scales=self["model.num_scales"],
            num_iterations=self["model.num_iterations"],
            variant=self["fusion.variant"],
            num_classes=self["model.num_classes"],
            cross=self["fusion.cross"],
            beta_init=self["fusion.beta_init"],
        )


def _split_assignment(line: str, where: str):
    if "=" not in line:
        raise ConfigError(f"{where}: expected key = value, got {line!r}")
    key, value = line.split("=", 1)
    return key.strip(), value.strip()


def parse_config_text(text: str) -> dict:
    """Parse config file text into a {key: typed value} dict."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"line {lineno}"
        key, value = _split_assignment(line, where)
        if key not in _DEFAULT_MAP:
            raise ConfigError(f"{where}: unknown config key: {key}")
        values[key] = _parse_value(key, value, where)
    return values
