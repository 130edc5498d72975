"""Exception hierarchy shared across the package.

Each class maps to a CLI exit code so shell callers can distinguish
bad configuration from bad data from numerical failure.
"""


class KnockemError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(KnockemError):
    """Invalid parameters or inconsistent configuration."""

    exit_code = 2


class DataError(KnockemError):
    """Malformed or degenerate input data."""

    exit_code = 3


class SolverError(KnockemError):
    """A numerical routine failed to produce a usable result."""

    exit_code = 4

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics
