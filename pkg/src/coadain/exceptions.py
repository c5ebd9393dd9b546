"""Exception types shared across the package."""


class CoadainError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(CoadainError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class MaskValidationError(CoadainError, ValueError):
    """A component mask is not a valid one-hot partition."""


class ValidationError(CoadainError, ValueError):
    """An argument violates an operation precondition."""


class NumericError(CoadainError, FloatingPointError):
    """Non-finite values were encountered where finite ones are required."""


class CheckpointFormatError(CoadainError, ValueError):
    """A checkpoint archive is missing fields or has the wrong version."""


class ConfigError(CoadainError, ValueError):
    """A run configuration document failed schema validation."""
