"""Exception types shared across the package."""


class ProblemValidationError(ValueError):
    """A problem definition violates a hard invariant."""


class NonFiniteError(ArithmeticError):
    """An evaluator returned NaN or inf."""

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


class DivergenceError(ArithmeticError):
    """A propagated state left the admissible region."""

    def __init__(self, message, khat=None, x=None):
        super().__init__(message)
        self.khat = khat
        self.x = x


class UnderdeterminedFitError(ValueError):
    """The least-squares design matrix cannot identify the weights."""


class IncompatibleWeightsError(ValueError):
    """A weights file does not belong to the given problem."""
