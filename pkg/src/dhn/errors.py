"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to.
"""


class DhnError(Exception):
    exit_code = 1


class UsageError(DhnError):
    """Invalid call sequence or arguments (e.g. backward on a foreign node)."""

    exit_code = 1


class ConfigError(UsageError):
    exit_code = 1


class DataError(DhnError):
    """Malformed input data. Messages name the offending row/column."""

    exit_code = 2


class NumericalError(DhnError):
    """A numerical routine left its domain (non-PD matrix, log-CDF overflow)."""

    exit_code = 3


class DivergenceError(NumericalError):
    """Training produced a non-finite loss or gradient."""

    exit_code = 3


class TrainingError(DivergenceError):
    def __init__(self, message, param=None, step=None):
        super().__init__(message)
        self.param = param
        self.step = step


class ModelFileError(DhnError):
    """Model file is unreadable, truncated or incompatible."""

    exit_code = 2
