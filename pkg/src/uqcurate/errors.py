"""Exception types shared across the package."""


class UqCurateError(Exception):
    """Base class for all package errors."""


class DimensionError(UqCurateError, ValueError):
    """Array shapes do not line up for the requested operation."""


class DomainError(UqCurateError, ValueError):
    """A numeric argument is outside the operation's domain."""


class ConfigError(UqCurateError, ValueError):
    """A configuration value or combination is invalid."""


class DataFormatError(UqCurateError, ValueError):
    """An input file does not follow the documented format."""


class ModelStateError(UqCurateError, RuntimeError):
    """Operation requires a model state (e.g. trained) that is not present."""


class DivergenceError(UqCurateError, RuntimeError):
    """Training produced a non-finite loss."""
