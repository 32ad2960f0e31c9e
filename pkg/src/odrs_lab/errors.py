"""Exception types shared across the package."""


class OdrsLabError(Exception):
    """Base class for all library errors."""


class ValidationFailure(OdrsLabError):
    """An instance failed validation (CLI exit code 2)."""


class InvariantBreach(OdrsLabError):
    """An internal invariant was violated at runtime (CLI exit code 3)."""


class SizeError(OdrsLabError):
    """Input exceeds the exact-computation size caps."""


class DomainError(OdrsLabError):
    """Input is outside an operation's domain."""


class FeasibilityError(OdrsLabError):
    """Scaling parameters violate the feasibility conditions."""

    def __init__(self, message, violated=None):
        super().__init__(message)
        self.violated = violated
