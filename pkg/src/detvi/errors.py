"""Exception hierarchy. Each family maps to a stable CLI exit code."""


class DetviError(Exception):
    exit_code = 1


class ConfigError(DetviError, ValueError):
    """Invalid option, malformed input or violated precondition."""

    exit_code = 2


class DataError(ConfigError):
    """Dataset ingestion failure.

    ``code`` distinguishes the failure: ``missing-file``, ``missing-target``,
    ``non-finite`` or ``empty``.
    """

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class PredictorError(DetviError, RuntimeError):
    """The predictor failed, timed out or returned a malformed response."""

    exit_code = 3


class DegenerateImportanceError(DetviError, ArithmeticError):
    """Every raw score is non-positive so scores cannot be normalized."""

    exit_code = 4


class ConvergenceError(DetviError, RuntimeError):
    """Iterative solver hit its iteration cap. ``last`` holds the final iterate."""

    exit_code = 4

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last
