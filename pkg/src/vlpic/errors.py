"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid run configuration (bad value, unknown key, inconsistent sizes)."""


class UnsupportedOrderError(ValueError):
    """A derivative or quadrature order the discretization cannot provide."""


class NonconvergenceError(RuntimeError):
    """A fixed-point solve failed to reach its tolerance.

    Carries the last update norm and the iteration count so callers can
    decide whether to retry with a smaller step.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or mismatched checkpoint data."""
