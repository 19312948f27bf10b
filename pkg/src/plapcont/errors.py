"""Exception types raised by the numerical routines."""


class PlapcontError(Exception):
    """Base class for all package errors."""


class DomainError(PlapcontError, ValueError):
    """A scalar function was evaluated outside its domain."""


class NoConvergence(PlapcontError):
    """An iterative method hit its iteration cap or diverged."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class PositivityLoss(NoConvergence):
    """Damping could not keep the iterate interior-positive."""


class StepFailure(PlapcontError):
    """Continuation step size fell below ``ds_min``."""

    def __init__(self, message, branch=None):
        super().__init__(message)
        self.branch = branch


class NoFold(PlapcontError):
    """The branch has no sign change of d(lambda)/ds."""


class QueryTooCloseToFold(PlapcontError):
    """A solution-count query sits within the lambda resolution of the fold."""


class TailTooShort(PlapcontError):
    """Too few large-norm points to estimate the asymptote."""


class ConfigError(PlapcontError):
    """Invalid run configuration."""
