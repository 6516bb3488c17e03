"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a documented precondition or invariant."""


class AlignmentInfeasibleError(ValidationError):
    """The target sequence cannot be aligned within the given number of frames."""
