from typing import Dict


class DiffusionClassifierError(Exception):
    """
    Base class for every error raised by this package.
    """

    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def to_dict(self) -> Dict[str, str]:
        """Machine-readable form used by the CLI and the API."""
        return {
            'error': self.code,
            'type': type(self).__name__,
            'message': self.message,
        }


class ShapeError(DiffusionClassifierError):
    """Operand dimensions do not line up."""

    code = "dimension_error"


class ConfigurationError(DiffusionClassifierError):
    """A configuration value is out of range or inconsistent."""

    code = "configuration_error"


class UsageError(DiffusionClassifierError):
    """An operation was called with arguments outside its contract."""

    code = "usage_error"


class NonFiniteError(DiffusionClassifierError):
    """A NaN or Inf appeared while strict mode was on."""

    code = "non_finite"


class CheckpointError(DiffusionClassifierError):
    """A checkpoint file is malformed or belongs to another configuration."""

    code = "checkpoint_error"
