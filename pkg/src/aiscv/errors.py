"""Exception hierarchy shared by every module."""


class AiscvError(Exception):
    """Base class for errors raised by aiscv."""


class ConfigError(AiscvError, ValueError):
    """Invalid experiment configuration or distribution spec."""


class NumericalError(AiscvError, ArithmeticError):
    """A numerical procedure could not produce a valid result."""


class SupportViolation(NumericalError):
    """Sampling density vanishes where the integrand does not."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DegenerateControl(NumericalError):
    """Control variate has zero empirical variance."""


class SingularCovariance(NumericalError):
    """Covariance matrix is not positive definite, even after jitter."""


class UnreachableTarget(NumericalError):
    """All cross-entropy weights of a target vanish on the history sample."""


class BudgetError(NumericalError):
    """Model-call accounting does not match the expected budget."""
