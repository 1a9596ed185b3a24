"""Exception hierarchy for the PISR engine.

Numerical domain problems (log of a negative number, division by zero, ...)
are *not* exceptions: they surface as non-finite values and the loss layer
turns them into rejected reports. The classes below cover misuse of the API,
bad inputs and unrecoverable fitting states.
"""
from __future__ import annotations


class PisrError(Exception):
    """Base class for every error raised by this package."""


class ExpressionError(PisrError, ValueError):
    """A token sequence is not a valid postfix expression."""


class ReportingError(PisrError):
    """An expression cannot be rendered (e.g. a constant slot is missing)."""


class UsageError(PisrError, ValueError):
    """An operation was called outside its preconditions."""


class ConfigError(PisrError):
    """The run configuration or one of its input files is invalid."""


class DataError(PisrError):
    """A dataset or generated table contains unusable values."""


class ResumeError(PisrError):
    """A checkpoint is missing, corrupt or incompatible."""


class FitRejected(PisrError):
    """Constant fitting cannot start or cannot make progress.

    Parameters
    ----------
    reason : str
        Short machine-friendly reason, e.g. ``"non_finite_start"``.
    """

    def __init__(self, reason: str, message: str | None = None):
        super().__init__(message or reason)
        self.reason = reason
