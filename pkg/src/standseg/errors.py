"""Exception types shared across the pipeline.

Argument-validation failures raise plain ValueError; everything that points
at a problem in input *data* derives from DataError so the CLI can map it to
exit code 2.
"""


class StandSegError(Exception):
    """Base class for all pipeline errors."""


class DataError(StandSegError):
    """Invalid or inconsistent input data."""


class FormatError(DataError):
    """Malformed binary container (bad magic, truncation, bad dtype)."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ParseError(DataError):
    """Malformed text input; carries a 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class AlignmentError(DataError):
    """Grid specs that should match do not; names the differing field."""


class GeometryError(DataError):
    """Degenerate or invalid geometry (open rings, collinear TIN input)."""


class ShapeError(DataError):
    """Array shape mismatch between operands."""


class TrainingError(StandSegError):
    """Non-finite gradients or other failures inside the training loop."""


class UndefinedMetricError(StandSegError):
    """Metric requested on an empty confusion matrix."""
