"""Exception types shared across the package."""


class GcdroError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(GcdroError):
    """Invalid configuration value or malformed config file."""


class DataError(GcdroError):
    """Problem reading or interpreting an input dataset."""


class NumericalError(GcdroError):
    """A computation produced non-finite or degenerate values."""


class ConvergenceError(NumericalError):
    """An iterative solver ran out of iterations.

    Carries the last residual so callers can decide whether the partial
    answer is usable.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
