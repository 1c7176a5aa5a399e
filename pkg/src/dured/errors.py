"""Exception hierarchy shared across the package."""


class DuredError(Exception):
    """Base class for all package errors."""


class DataValidationError(DuredError, ValueError):
    """Input array is malformed (wrong rank, non-finite values, ...)."""


class ShapeMismatchError(DuredError, ValueError):
    """Two operands that must share a grid shape do not."""


class SingularSystemError(DuredError, ValueError):
    """The data-consistency normal equations are not invertible."""


class DivergenceError(DuredError, RuntimeError):
    """An iterative procedure blew up.

    ``history`` carries whatever diagnostics were collected before the
    abort, ``checkpoint`` the last good state when one exists.
    """

    def __init__(self, message, history=None, checkpoint=None):
        super().__init__(message)
        self.history = history
        self.checkpoint = checkpoint


class NonFiniteGradientError(DuredError, FloatingPointError):
    """An optimizer step was asked to consume a NaN/Inf gradient."""


class FormatError(DuredError, ValueError):
    """A file on disk does not match the expected binary layout."""
