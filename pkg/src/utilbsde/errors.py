"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    pass


class ConvergenceFailure(RuntimeError):
    """An iterative projection did not reach its tolerance.

    ``best`` holds the best image point found, ``best_distance`` its distance.
    """

    def __init__(self, message, best=None, best_distance=None):
        super().__init__(message)
        self.best = best
        self.best_distance = best_distance


class EllipticityViolation(ValueError):
    pass


class BasisDegeneracy(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
