"""Exception types shared across the package."""


class InputError(ValueError):
    """Raised when arguments have the wrong shape, sign or size."""


class NumericalError(ArithmeticError):
    """Raised when a numerical routine fails (no convergence, lost definiteness)."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SolverFailure(RuntimeError):
    """Raised by a controller when its optimization problem could not be solved."""

    def __init__(self, message, step=None, result=None):
        self.reason = message
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step
        self.result = result
