"""Error hierarchy shared by every sub-package.

Each error carries a ``kind`` slug; the command line prints it as the
machine-parsable prefix ``error[<kind>]: <message>``.
"""

from typing import Optional


class CompressedActionError(Exception):
    """Base class for all errors raised by the toolkit."""

    kind = "error"

    def one_line(self) -> str:
        """Render the error as a single prefixed line."""
        message = " ".join(str(self).split())
        return f"error[{self.kind}]: {message}"


class DimensionError(CompressedActionError, ValueError):
    """Operand shapes disagree along a named axis."""

    kind = "dimension"


class GeometryError(CompressedActionError, ValueError):
    """An operator would produce an empty output."""

    kind = "geometry"


class PreconditionError(CompressedActionError, ValueError):
    """An operator was called outside its documented domain."""

    kind = "precondition"


class OperatorUsageError(CompressedActionError, ValueError):
    """Unknown operator mode or flag."""

    kind = "usage"


class NumericError(CompressedActionError, ArithmeticError):
    """NaN or otherwise unusable numeric input."""

    kind = "numeric"


class GraphStateError(CompressedActionError, RuntimeError):
    """Backward was requested on a graph that was already released."""

    kind = "graph-state"


class NonDeterministicGraphError(CompressedActionError, RuntimeError):
    """A graph returned different values for identical parameters."""

    kind = "nondeterministic"


class StreamFormatError(CompressedActionError, ValueError):
    """Binary container could not be parsed."""

    kind = "stream-format"

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class CodecError(CompressedActionError, ValueError):
    """Frames cannot be encoded or decoded as given."""

    kind = "codec"


class ConfigurationError(CompressedActionError, ValueError):
    """Model, training or config-file settings are inconsistent."""

    kind = "configuration"


class DatasetError(CompressedActionError, ValueError):
    """Manifest or split problems."""

    kind = "dataset"


class TrainingDivergedError(CompressedActionError, ArithmeticError):
    """Loss became NaN or infinite during training."""

    kind = "diverged"


class CheckFailedError(CompressedActionError):
    """A verification run exceeded its tolerance."""

    kind = "check-failed"
