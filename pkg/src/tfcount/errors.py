"""Exception hierarchy. Each class carries the CLI exit code for its error class."""


class CountingError(Exception):
    exit_code = 1


class InvalidParameterError(CountingError, ValueError):
    exit_code = 6


class InvalidInputError(CountingError, ValueError):
    exit_code = 7


class ConfigError(CountingError):
    exit_code = 2


class IngestionError(CountingError):
    exit_code = 3


class ReferenceFailureError(CountingError):
    """Raised when no usable reference mask could be produced."""

    exit_code = 4


class BackendLoadError(CountingError):
    exit_code = 5
