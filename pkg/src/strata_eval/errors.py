"""Exceptions and warning categories shared across the package."""


class StrataEvalError(Exception):
    """Base class for all package errors."""


class EmptyStratumError(StrataEvalError):
    """A stratum has no labeled units, so its sampling weight is undefined."""


class StratumRelabelError(StrataEvalError):
    """Stratum labels are not contiguous 1..S; relabel with `relabel_strata`."""


class SchemaError(StrataEvalError):
    """Input data violates the declared schema (e.g. non-binary outcome)."""


class ParseError(StrataEvalError):
    """A CSV cell could not be parsed; carries the offending row number."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class DegenerateFeatureError(StrataEvalError):
    """A spline target feature is constant; knots cannot be placed."""


class RankError(StrataEvalError):
    """Requested more principal components than the numerical rank allows."""


class NonConvergenceError(StrataEvalError):
    """Solver failed to converge; `.outcome` holds the best iterate found."""

    def __init__(self, message, outcome=None):
        super().__init__(message)
        self.outcome = outcome


class SingularJacobianError(StrataEvalError):
    """Unpenalized estimating equation has no finite root (e.g. separation)."""


class ConstraintInfeasibleError(StrataEvalError):
    """No iterate satisfied the equality constraints to the required 1e-6."""


class TooFewLabeledError(StrataEvalError):
    """A stratum has fewer labeled units than the number of CV folds."""


class VariantMismatchError(StrataEvalError):
    """Ensemble blending requires matching estimator variant and metric."""


class AllZeroVarianceError(StrataEvalError):
    """Every stratum influence SD is zero; allocation is undefined."""


class TooManyFailuresError(StrataEvalError):
    """More than half of the perturbation replicates failed to solve."""


class RankWarning(UserWarning):
    """Basis matrix is numerically rank-deficient (non-fatal under ridge)."""


class CovarianceDegenerateWarning(UserWarning):
    """Pairwise covariance for the estimator combination was degenerate."""


class ExtremeTiltWarning(UserWarning):
    """Density-ratio tilt produced weights far from their untilted values."""
