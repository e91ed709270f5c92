"""Exception types shared across the package."""


class QoplError(Exception):
    """Base class for all package errors."""


class ConfigurationError(QoplError, ValueError):
    """Invalid configuration or degenerate input."""


class DataError(QoplError, ValueError):
    """Dataset content that cannot be used (e.g. non-finite features)."""


class NumericalError(QoplError, ArithmeticError):
    """A linear solve or factorisation failed."""


class OptimizationError(NumericalError):
    """An iterative fit diverged."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class UnsupportedModeError(ConfigurationError):
    """Operation requested in a loss mode it does not support."""
