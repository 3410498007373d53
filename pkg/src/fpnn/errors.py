"""Exception types shared across the package."""


class FpnnError(Exception):
    """Base class for all package errors."""


class ShapeError(FpnnError, ValueError):
    """Tensor shapes are inconsistent with an operation's contract."""


class NonFiniteError(FpnnError, ArithmeticError):
    """An operation produced NaN or Inf values."""


class DataValidationError(FpnnError, ValueError):
    """On-disk or in-memory battery data violates its invariants."""


class CheckpointError(FpnnError, ValueError):
    """A serialized artifact is corrupt or has an incompatible version."""


class TrainingError(FpnnError, RuntimeError):
    """Training diverged or was mis-configured."""
