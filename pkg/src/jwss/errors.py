"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class SolverError(RuntimeError):
    """Raised when a numerical routine cannot produce a usable result."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConvergenceWarning(UserWarning):
    """Iterative solver stopped at max_iters above its tolerance."""
