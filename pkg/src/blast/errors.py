"""Exception types shared across the package."""


class BlastError(Exception):
    """Base class for all package errors."""


class InputError(BlastError, ValueError):
    """Invalid user-supplied data, configuration or arguments."""


class NumericalError(BlastError, ArithmeticError):
    """A linear-algebra step failed (non positive-definite system, overflow)."""
