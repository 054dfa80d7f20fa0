"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor dimensions violate an operation's contract."""


class DataError(ValueError):
    """Input values are out of the documented domain (e.g. bad class index)."""


class MetricUndefinedError(ValueError):
    """A metric was requested on an empty pixel set."""


class FormatError(ValueError):
    """A serialized file is malformed; carries the byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


class CheckpointError(RuntimeError):
    """Checkpoint file invalid or inconsistent with the requested config."""


class TrainingError(RuntimeError):
    """Training aborted (e.g. NaN gradient)."""
