"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid specification or parameters (bad grid, negative amplitude, ...)."""


class DomainError(ValueError):
    """A query point or radius falls outside the computational domain."""


class SolverError(RuntimeError):
    """A solver failed to converge or was asked for something unstable."""


class SubcriticalLevelError(SolverError):
    """Metric problem did not reach a steady state.

    The usual cause is a level below the critical value, where no bounded
    steady state exists.  Carries the residual history for diagnosis.
    """

    def __init__(self, message, residual_trace=None):
        super().__init__(message)
        self.residual_trace = list(residual_trace) if residual_trace is not None else []
