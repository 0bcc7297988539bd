"""Exception types shared across the package."""


class ParmisError(Exception):
    """Base class for errors raised by this package."""


class InputError(ParmisError, ValueError):
    """Invalid arguments: wrong shapes, out-of-range values, violated preconditions."""


class NumericalError(ParmisError, ArithmeticError):
    """A numerical routine failed, e.g. a kernel matrix that stays indefinite after jitter."""
