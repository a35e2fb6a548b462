"""Exception types shared across the package."""


class DilrecError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(DilrecError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(DilrecError, ValueError):
    """An input value lies outside an operation's numeric domain."""

    def __init__(self, message: str, index=None):
        super().__init__(message)
        self.index = index


class EngineUsageError(DilrecError, RuntimeError):
    """The differentiation machinery was driven incorrectly."""


class DegenerateBatchError(DilrecError, ValueError):
    """A statistic is undefined on this batch (e.g. zero distance variance)."""


class ConfigError(DilrecError, ValueError):
    """An experiment configuration is malformed or violates a constraint."""


class DataError(DilrecError, ValueError):
    """Input data is missing, malformed, or unusable as requested."""


class NumericalError(DilrecError, RuntimeError):
    """Training or optimization produced non-finite values."""
