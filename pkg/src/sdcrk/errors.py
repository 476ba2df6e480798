"""Exception hierarchy shared across the package."""


class SdcError(Exception):
    """Base class for all errors raised by this package."""


class ResourceLimitError(SdcError):
    """A configured size or stage cap would be exceeded."""


class IllConditionedError(SdcError):
    """Input data is too close to degenerate for the working precision."""


class SingularEedError(SdcError):
    """An operation required an invertible error-discretization matrix."""


class UnsupportedScheduleError(SdcError):
    """The schedule cannot be executed by the sequential sweep solver."""


class NewtonConvergenceError(SdcError):
    """A nonlinear stage or collocation solve exhausted its iteration budget."""

    def __init__(self, message, residual=None, stage=None):
        super().__init__(message)
        self.residual = residual
        self.stage = stage


class PoleError(SdcError):
    """A linear-stability evaluation hit a pole of the stability function."""


class PrecisionError(SdcError):
    """The working precision is insufficient for the requested computation."""


class CheckMismatchError(SdcError):
    """A golden-file comparison failed."""


class PrecisionWarning(UserWarning):
    """The working precision is marginal for the requested analysis."""
