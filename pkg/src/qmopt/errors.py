"""Exception types raised across the package."""


class QuaternionDivisionError(ZeroDivisionError):
    pass


class ShapeMismatch(ValueError):
    pass


class InvalidRank(ValueError):
    pass


class ConvergenceFailure(RuntimeError):
    pass


class NotDifferentiable(ArithmeticError):
    pass


class NonFinite(FloatingPointError):
    pass


class StallWarning(RuntimeWarning):
    """Solver stopped at max_iters with the residual still above tolerance."""
