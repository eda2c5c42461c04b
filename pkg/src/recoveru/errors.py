"""Exception types shared across the package.

Two broad families matter to callers: :class:`ValidationError` for bad
inputs (rejected before any numerics run) and :class:`NumericalError`
for failures that surface mid-computation. The command line maps the
former to exit code 1 and the latter to exit code 2.
"""

from __future__ import annotations


class RecoveruError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(RecoveruError):
    """Invalid parameters, malformed data, or unusable configuration."""


class NumericalError(RecoveruError):
    """A numerical routine failed or did not converge."""


class ParameterError(ValidationError):
    """Covariance or model parameters outside their legal domain."""


class MissingInputError(ValidationError):
    """An estimator was asked to run without a required input."""


class DegenerateDataError(ValidationError):
    """Data degenerate for the requested operation (empty treatment arm,
    constant covariate with zero spread, and similar)."""


class SingularMatrixError(NumericalError):
    """A covariance matrix could not be factorized even after
    stabilization."""


class SingularDesignError(NumericalError):
    """Rank-deficient regression design."""


class BinningError(NumericalError):
    """Too few usable distance bins to summarize spatial structure."""


class FitError(NumericalError):
    """A model fit failed outright (optimizer failure, degenerate
    residuals)."""


class SeparationError(FitError):
    """Logistic fit diverged, indicating (near-)complete separation."""


class ExtremeWeightError(NumericalError):
    """A propensity score too close to 1 produced an unusable inverse
    weight."""


class BootstrapInstabilityError(NumericalError):
    """Too many bootstrap replicates failed for the standard error to be
    trusted."""


class ScenarioFailureError(NumericalError):
    """Too many simulation replicates failed for the scenario summary to
    be trusted."""


class ReportError(RecoveruError):
    """Report emission failed; wraps filesystem errors with context."""
