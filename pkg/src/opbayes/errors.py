"""Exception and warning types shared across the package."""


class OpBayesError(Exception):
    """Base class for package errors."""


class ValidationError(OpBayesError, ValueError):
    """Invalid input: bad parameters, malformed records, inconsistent shapes."""


class ConvergenceError(OpBayesError, RuntimeError):
    """A numerical solver did not reach its tolerance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InfeasibleError(OpBayesError, ValueError):
    """An elicitation problem has no solution for the stated inputs."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InfiniteMeanWarning(UserWarning):
    """A Pareto tail-index distribution puts mass on xi <= 1."""
