"""Exception types shared across the package."""


class SandtreeError(Exception):
    """Base class for package errors."""


class GuardError(SandtreeError):
    """An exponential enumeration was asked to run past its size guard."""


class ConvergenceError(SandtreeError):
    """An iteration did not reach its tolerance within the allowed steps.

    The partial diagnostics are kept on the exception so callers can report them.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NumericalDomainError(SandtreeError, ValueError):
    """A numerical routine was evaluated outside the domain where it is real."""
