"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a documented precondition or invariant."""


class CapabilityError(RuntimeError):
    """The request is valid but outside what this implementation computes."""
