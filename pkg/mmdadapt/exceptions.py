"""Exception classes raised by mmdadapt.

All of them derive from a built-in exception class so that callers can keep catching ``ValueError`` or
``RuntimeError``; the command line interface maps them to exit codes.
"""


class ShapeError(ValueError):
    """Raised when tensor, sample set or image shapes are incompatible with an operation."""


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or infinite values, in its forward or backward pass."""


class ValidationError(ValueError):
    """Raised when a manifest, configuration file or dataset violates its invariants."""


class ProtocolError(ValueError):
    """Raised when an evaluation or training protocol cannot be formed from the available samples."""


class CheckpointError(ValueError):
    """Raised when a checkpoint container cannot be read or has an unsupported format version."""


class TrainingError(RuntimeError):
    """Raised when training diverges (non-finite loss or gradient) at a given epoch and batch."""


__all__ = [
    "ShapeError",
    "NonFiniteError",
    "ValidationError",
    "ProtocolError",
    "CheckpointError",
    "TrainingError",
]
