"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Raised when an input violates a documented precondition."""


class SolverFailure(RuntimeError):
    """An iterative solve did not converge.

    The best iterate and its relative residual are kept so callers can
    still report something useful.
    """

    def __init__(self, message, x=None, residual=None, iterations=None):
        super().__init__(message)
        self.x = x
        self.residual = residual
        self.iterations = iterations
