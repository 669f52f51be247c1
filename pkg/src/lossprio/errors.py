"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid dimensions, fractions, rates, or other build parameters."""


class IngestionError(ValueError):
    """Malformed input file; message names the failing byte offset."""

    def __init__(self, message: str, *, path=None, offset: int | None = None):
        if path is not None or offset is not None:
            message = f"{message} (file={path!s}, byte offset={offset})"
        super().__init__(message)
        self.path = path
        self.offset = offset


class TrainingDivergedError(RuntimeError):
    """Non-finite loss or gradient; carries the update index where it happened."""

    def __init__(self, message: str, *, iteration: int):
        super().__init__(f"{message} (update {iteration})")
        self.iteration = iteration


class AggregationError(ValueError):
    """Metric series from different runs cannot be aligned."""
