"""Exception types shared across the package."""


class EventFormatError(ValueError):
    """A serialized file (event stream, checkpoint, surface) is malformed:
    bad magic, truncated record, non-numeric field, unsorted binary
    timestamps, ..."""


class StreamValidationError(ValueError):
    """An event stream violates its geometry or ordering contract."""


class ConfigError(ValueError):
    """A layer / feature / benchmark configuration is internally inconsistent
    or does not match the shapes of the data it is applied to."""


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss becomes non-finite.

    Carries the epoch index at which divergence was detected.
    """

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")
