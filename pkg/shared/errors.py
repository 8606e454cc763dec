class EfmsigError(Exception):
    """Base class for every error raised by the library."""


class AlphabetMismatchError(EfmsigError, ValueError):
    """Two tensors over different alphabets were combined."""


class BudgetExceededError(EfmsigError, ValueError):
    """Dense storage for the requested truncation exceeds the coefficient budget."""


class DomainError(EfmsigError, ValueError):
    """A parameter is outside the range the computation is defined for."""


class TimeRegressionError(DomainError):
    """A streaming update was asked to move backwards in time."""


class TruncationError(EfmsigError, ValueError):
    """The truncation order is too small for the requested quantity."""


class DivergenceError(EfmsigError, ArithmeticError):
    """An exponential polynomial has no finite limit at infinity."""


class BlowUpError(EfmsigError, ArithmeticError):
    """
    A time-stepping computation left the range where it is trustworthy.
    `time` records where it happened, when known.
    """

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class UsageError(EfmsigError, ValueError):
    """The command line could not be parsed."""
