"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative routine exhausts its iteration cap."""


class PlanInfeasibleError(ValidationError):
    """Raised when a batch plan cannot fit inside the non-corrupted sets."""


class DegenerateTruthError(ValidationError):
    """Raised when a signal matrix has a zero row on its declared support."""
