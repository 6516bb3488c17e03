"""Exception types for the bridge."""


class ValidationError(ValueError):
    """An input violates a documented precondition or invariant."""


class RowError(ValidationError):
    """One manifest row could not be processed; the run continues without it."""
