"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A scalar or structural parameter is outside its admissible range."""


class DomainError(ValueError):
    """A spatial point lies outside the computational box."""


class SolverError(RuntimeError):
    """An iterative solve failed to reach its residual target."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class StepError(RuntimeError):
    """A time step could not be completed."""

    def __init__(self, message, step_index=None, residual=None):
        super().__init__(message)
        self.step_index = step_index
        self.residual = residual
