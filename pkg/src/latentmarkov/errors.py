"""Exception hierarchy shared by the estimation engines and the CLI."""


class LatentMarkovError(Exception):
    """Base class for all package errors."""


class DataError(LatentMarkovError, ValueError):
    """Malformed, inconsistent or out-of-range input data."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ParameterizationError(LatentMarkovError, ValueError):
    """Parameters that do not define a valid probability distribution."""


class NumericalError(LatentMarkovError, ArithmeticError):
    """A numerical procedure failed (singular system, impossible observation)."""


class ConfigError(LatentMarkovError, ValueError):
    """Invalid combination of fitting options."""
