"""Exception types shared across the package."""

from __future__ import annotations


class SvlabError(Exception):
    """Base class for all package errors."""


class ParameterError(SvlabError, ValueError):
    """An argument is outside its admissible range."""


class PreconditionError(SvlabError, ValueError):
    """An input fails a mathematical precondition of the operation."""


class NumericalError(SvlabError, ArithmeticError):
    """A numerical routine failed to converge or produced inconsistent output."""


class CertificateFailure(SvlabError):
    """A certificate leaf could not be bounded away from zero.

    Attributes
    ----------
    block : tuple
        Identity of the offending block (start, stop) in the working order.
    value : float
        The non-positive leaf bound that triggered the failure.
    """

    def __init__(self, message: str, block=None, value: float | None = None):
        super().__init__(message)
        self.block = block
        self.value = value


class DecompositionError(SvlabError, RuntimeError):
    """A decomposition invariant was violated.

    Attributes
    ----------
    prop : int
        Number of the violated decomposition property (1 to 4).
    """

    def __init__(self, message: str, prop: int):
        super().__init__(message)
        self.prop = prop


class InternalError(SvlabError, RuntimeError):
    """A guarantee that should hold by construction did not."""
