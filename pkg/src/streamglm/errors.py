"""Exception types raised by the estimators."""


class InvalidInputError(ValueError):
    """Malformed or dimensionally inconsistent input."""


class NumericFailureError(ArithmeticError):
    """A linear system could not be solved reliably.

    ``condition`` holds the condition-number estimate of the offending matrix.
    """

    def __init__(self, message, condition=float("nan")):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class NonConvergenceError(RuntimeError):
    """An iterative solver stopped at its iteration cap."""

    def __init__(self, message, last_iterate=None, residual_norm=float("nan")):
        super().__init__(f"{message} (residual norm {residual_norm:.3e})")
        self.last_iterate = last_iterate
        self.residual_norm = residual_norm
