"""Exception types shared by all ossf modules."""


class OssfError(Exception):
    """Base class for all ossf errors."""


class DimensionError(OssfError, ValueError):
    """Shape or dimensionality of an input is unusable."""


class DomainError(OssfError, ValueError):
    """A scalar argument lies outside its mathematical domain."""


class ValidationError(OssfError, ValueError):
    """Input violates a documented precondition or configuration contract."""


class NumericError(OssfError, RuntimeError):
    """A numerical procedure failed to reach its accuracy contract.

    The optional ``diagnostics`` dict carries residuals, singular values or
    other context useful for debugging the failure.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics) if diagnostics else {}
