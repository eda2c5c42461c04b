"""Causal effect estimation under unmeasured spatial confounding.

The central idea: when a latent spatially smooth variable confounds a
treatment-outcome relationship, the residuals of a spatially fitted
outcome regression still carry part of it. Kriging-style smoothing of
those residuals recovers that part, and feeding the recovered field into
the propensity score restores covariate balance that no measured
covariate can provide. A doubly robust estimator then combines both
models into the effect estimate, with uncertainty from a parametric
bootstrap.

The package splits into a small geostatistics core (Matern covariance,
field simulation, variogram fitting), the recovery and estimation layer,
a simulation harness that measures bias, variance, and interval coverage
over a scenario grid, and a command line for running the same pipeline
on CSV data.
"""

from .bootstrap import (
    BootstrapResult,
    BootstrapSpec,
    gold_bootstrap,
    parametric_bootstrap,
)
from .config import AnalysisConfig, load_config
from .errors import (
    BinningError,
    BootstrapInstabilityError,
    DegenerateDataError,
    ExtremeWeightError,
    FitError,
    MissingInputError,
    NumericalError,
    ParameterError,
    RecoveruError,
    ReportError,
    ScenarioFailureError,
    SeparationError,
    SingularDesignError,
    SingularMatrixError,
    ValidationError,
)
from .estimators import (
    METHODS,
    AttResult,
    BalanceTable,
    GoldFit,
    PropensityFit,
    RecoverUFit,
    att_dr,
    att_iptw,
    att_weights,
    balance_table,
    estimate_att,
    fit_gold,
    fit_recoveru,
    logistic_fit,
    smd,
)
from .geo import (
    MaternParams,
    PairBinning,
    Semivariogram,
    cholesky_factor,
    cov_matrix,
    empirical_semivariogram,
    matern_cov,
    sample_grf,
)
from .ingest import export_csv, ingest_csv
from .recovery import RecoveredConfounder, recover_u, recovery_smoother
from .reports import (
    emit_report,
    merge_balance,
    read_att_table,
    read_balance_table,
    read_metrics_table,
    write_att_table,
    write_balance_table,
    write_manifest,
)
from .simulate import (
    TRUE_ATT,
    MethodMetrics,
    Scenario,
    ScenarioMetrics,
    case_study_dataset,
    generate_dataset,
    grid_scenarios,
    run_scenario,
)
from .spatial import (
    GlsFit,
    OutcomeFit,
    SpatialDataset,
    gls_fit,
    irwls_covariance_fit,
)

__version__ = "0.1.0"

__all__ = [
    "AnalysisConfig",
    "AttResult",
    "BalanceTable",
    "BinningError",
    "BootstrapInstabilityError",
    "BootstrapResult",
    "BootstrapSpec",
    "DegenerateDataError",
    "ExtremeWeightError",
    "FitError",
    "GlsFit",
    "GoldFit",
    "MaternParams",
    "METHODS",
    "MethodMetrics",
    "MissingInputError",
    "NumericalError",
    "OutcomeFit",
    "PairBinning",
    "ParameterError",
    "PropensityFit",
    "RecoverUFit",
    "RecoveredConfounder",
    "RecoveruError",
    "ReportError",
    "Scenario",
    "ScenarioFailureError",
    "ScenarioMetrics",
    "Semivariogram",
    "SeparationError",
    "SingularDesignError",
    "SingularMatrixError",
    "SpatialDataset",
    "TRUE_ATT",
    "ValidationError",
    "att_dr",
    "att_iptw",
    "att_weights",
    "balance_table",
    "case_study_dataset",
    "cholesky_factor",
    "cov_matrix",
    "emit_report",
    "empirical_semivariogram",
    "estimate_att",
    "export_csv",
    "fit_gold",
    "fit_recoveru",
    "generate_dataset",
    "gls_fit",
    "gold_bootstrap",
    "grid_scenarios",
    "ingest_csv",
    "irwls_covariance_fit",
    "load_config",
    "logistic_fit",
    "matern_cov",
    "merge_balance",
    "parametric_bootstrap",
    "read_att_table",
    "read_balance_table",
    "read_metrics_table",
    "recover_u",
    "recovery_smoother",
    "run_scenario",
    "sample_grf",
    "smd",
    "write_att_table",
    "write_balance_table",
    "write_manifest",
]
