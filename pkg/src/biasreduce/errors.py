"""Exception hierarchy shared by the library and the command line."""


class BiasReduceError(Exception):
    """Base class for all errors raised by this package."""

    category = "error"
    exit_code = 1


class ConfigParseError(BiasReduceError):
    category = "config-parse"
    exit_code = 2


class ConfigValidationError(BiasReduceError):
    category = "config-validate"
    exit_code = 3


class PersistError(BiasReduceError):
    category = "io"
    exit_code = 4


class NumericalError(BiasReduceError):
    """A computed covariance left the PSD cone or a statistic degenerated."""

    category = "numeric"
    exit_code = 5


class DomainError(NumericalError, ValueError):
    """Spectrum outside the domain of a scalar function."""
