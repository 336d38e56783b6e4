"""Exception types shared across the package."""


class PriceDynError(Exception):
    """Base class for all package errors."""


class UsageError(PriceDynError, ValueError):
    """Raised when inputs violate an operation's preconditions."""


class NumericError(PriceDynError, ArithmeticError):
    """Raised when a computation produces non-finite values.

    Attributes:
        index: offending component index, when one can be named.
        step: integration or map step at which the failure occurred.
    """

    def __init__(self, message, index=None, step=None):
        super().__init__(message)
        self.index = index
        self.step = step
