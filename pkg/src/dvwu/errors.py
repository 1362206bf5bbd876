"""Exception types shared across the package."""


class UnlearnError(Exception):
    """Base class for all library-specific errors."""


class InvalidArgumentError(UnlearnError, ValueError):
    """An argument violates an operation's preconditions."""


class ConvergenceError(UnlearnError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance.

    Carries the final gradient-norm residual so callers can decide whether
    the partial result is usable.
    """

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class BudgetExhaustedError(UnlearnError, RuntimeError):
    """The deletion budget is spent: no samples would remain after the round."""


class IllConditionedHessianError(UnlearnError, RuntimeError):
    """A Hessian factorization failed or its smallest eigenvalue fell below the floor."""


class DataLoadError(UnlearnError, RuntimeError):
    """A dataset file or manifest could not be read or parsed."""
