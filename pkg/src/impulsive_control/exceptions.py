"""Exception types raised by the solvers and the command line front end."""


class DimensionError(ValueError):
    """Array shapes that do not agree with the state or input dimension."""


class ConfigError(ValueError):
    """A run configuration that fails validation."""


class DivergenceError(ArithmeticError):
    """An iterate or integration produced non-finite values."""


class ConvergenceError(RuntimeError):
    """A fixed-point iteration hit its iteration cap.

    ``history`` holds the sup-norm gap between successive iterates so the
    caller can tell a slow contraction from an oscillation.
    """

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class ControllabilityWarning(UserWarning):
    """Configuration outside the regime where the controllability argument applies."""
