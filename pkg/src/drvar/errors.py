"""Exception hierarchy shared by every module in the package."""


class DrvarError(Exception):
    """Base class for all package errors."""


class ValidationError(DrvarError, ValueError):
    """Input data or configuration is malformed."""


class SpecError(ValidationError):
    """A design specification does not match the dataset or parameter shapes."""


class DataError(ValidationError):
    """Observed data violate a Dataset invariant or produce non-finite values."""


class ShapeError(ValidationError):
    """Array lengths are inconsistent with a block layout."""


class EstimationError(DrvarError, ArithmeticError):
    """A numerical step failed on otherwise valid input."""


class SingularSystemError(EstimationError):
    """A design matrix or linear system is rank deficient."""


class ConvergenceError(EstimationError):
    """Newton iterations did not reach the score tolerance.

    The last iterate is kept on ``last_iterate`` so callers can inspect it.
    """

    def __init__(self, message, last_iterate=None, iterations=0):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations


class PositivityError(EstimationError):
    """A propensity value sits on the boundary of (0, 1)."""


class SingularBreadError(EstimationError):
    """The empirical derivative matrix of the stacked system is ill conditioned."""


class CollinearScoresError(EstimationError):
    """Nuisance score columns are (numerically) linearly dependent."""


class DegenerateResamplingError(EstimationError):
    """Too many bootstrap replicates had to be skipped."""


class SplitDegeneracyError(EstimationError):
    """A half of a sample split lacks treated or control rows."""


class ExperimentError(EstimationError):
    """Too many Monte Carlo replications failed."""


class DGPImplementationError(DrvarError):
    """Monte Carlo and closed-form truth values disagree."""
