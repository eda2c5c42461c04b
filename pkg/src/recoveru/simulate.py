"""Simulation harness: scenario grid, data generation, and method metrics.

A scenario fixes the confounding strength ``c``, the smoothness ``nu`` of
the latent field, a model regime, and a seed. The generating model is

    U ~ GRF with Matern(sigma2=1, theta=5, nu) covariance
    A ~ Bernoulli(expit(-0.85 + 0.1 Z1 + 0.2 Z2 - 0.1 Z3 - 0.7 Z4 + c U))
    Y = A + 0.55 Z1 + 0.21 Z2 + 1.17 Z3 - 1.5 Z4 + U + noise

with noise variance 0.1, so the true treatment effect on the treated is
exactly 1. Covariates are iid standard normal, or (in the spatial
variant) Z3 and Z4 are themselves Gaussian random fields. Locations are
drawn once per scenario and shared by every replicate.

Regimes control what the fitted models get wrong:

``correct``
    Truth and fitted models agree.
``misspec-outcome``
    The true outcome mean gains an interaction ``0.75 Z3 Z4`` that no
    fitted model includes.
``misspec-both``
    ``Z4`` is dropped from both the outcome and propensity models while
    fitting, so both are misspecified.

Each replicate runs the requested methods on the same dataset and a
failure of any of them discards the whole replicate, keeping the
per-method summaries comparable. Metrics aggregate successes only, and
the scenario itself fails when more than 10% of replicates do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import geo
from .bootstrap import BootstrapSpec, gold_bootstrap, parametric_bootstrap
from .errors import ParameterError, RecoveruError, ScenarioFailureError
from .estimators import (
    METHODS,
    AttResult,
    att_iptw,
    att_weights,
    fit_gold,
    fit_recoveru,
    logistic_fit,
    propensity_design,
    smd,
)
from .parallel import map_with_state
from .spatial import SpatialDataset, irwls_covariance_fit

#: Treatment effect implied by the generating model.
TRUE_ATT = 1.0
#: Outcome noise variance.
NOISE_VAR = 0.1
#: Latent field marginal variance and range.
U_SIGMA2 = 1.0
U_THETA = 5.0
#: Treatment model intercept and covariate coefficients.
PS_INTERCEPT = -0.85
PS_COEF = np.array([0.1, 0.2, -0.1, -0.7])
#: Outcome model covariate coefficients.
GAMMA_TRUE = np.array([0.55, 0.21, 1.17, -1.5])
#: Interaction added to the truth in the misspec-outcome regime.
INTERACTION_COEF = 0.75
#: Field parameters of the spatially varying covariates Z3 and Z4.
Z3_PARAMS = geo.MaternParams(sigma2=1.0, theta=3.0, nu=0.5)
Z4_PARAMS = geo.MaternParams(sigma2=1.0, theta=7.0, nu=0.5)

C_GRID = (1.5, 0.75, 0.3)
NU_GRID = (0.1, 0.5, 0.75, 1.5)
REGIMES = ("correct", "misspec-outcome", "misspec-both")

_COVARIATE_NAMES = ("z1", "z2", "z3", "z4")
#: Replicate failure fraction beyond which the scenario is refused.
MAX_REPLICATE_FAILURES = 0.1


@dataclass(frozen=True)
class Scenario:
    """One cell of the simulation study.

    ``c`` and ``nu`` default to grid values but accept overrides (for
    example ``c=0`` removes confounding entirely). ``bootstrap_replicates``
    of zero skips interval construction for the bootstrap-only methods.
    """

    c: float = 1.5
    nu: float = 1.5
    regime: str = "correct"
    spatial_covariates: bool = False
    n: int = 500
    replicates: int = 500
    seed: int = 0
    methods: tuple[str, ...] = METHODS
    bootstrap_replicates: int = 0
    bootstrap_mode: str = "fast"
    domain: float = 20.0

    def __post_init__(self) -> None:
        if self.regime not in REGIMES:
            raise ParameterError(
                f"unknown regime {self.regime!r}; choose from {', '.join(REGIMES)}"
            )
        if not (math.isfinite(self.c) and self.c >= 0.0):
            raise ParameterError(f"confounding strength c must be >= 0, got {self.c}")
        if not (math.isfinite(self.nu) and self.nu > 0.0):
            raise ParameterError(f"smoothness nu must be positive, got {self.nu}")
        if self.n < 2:
            raise ParameterError(f"need at least 2 locations, got {self.n}")
        if self.replicates < 1:
            raise ParameterError(f"replicates must be >= 1, got {self.replicates}")
        if self.seed < 0:
            raise ParameterError(f"seed must be nonnegative, got {self.seed}")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ParameterError(
                f"unknown methods {unknown}; choose from {', '.join(METHODS)}"
            )
        if not self.methods:
            raise ParameterError("at least one method is required")
        # Canonical method order keeps reports stable however the caller
        # spelled the list.
        wanted = set(self.methods)
        object.__setattr__(
            self, "methods", tuple(m for m in METHODS if m in wanted)
        )
        if self.bootstrap_replicates != 0 and self.bootstrap_replicates < 2:
            raise ParameterError(
                "bootstrap_replicates must be 0 (disabled) or at least 2, "
                f"got {self.bootstrap_replicates}"
            )
        if self.bootstrap_mode not in ("fast", "full"):
            raise ParameterError(
                f"bootstrap_mode must be 'fast' or 'full', got {self.bootstrap_mode!r}"
            )
        if not (math.isfinite(self.domain) and self.domain > 0.0):
            raise ParameterError(f"domain must be positive, got {self.domain}")

    @property
    def label(self) -> str:
        regime = self.regime + ("+spatial" if self.spatial_covariates else "")
        return f"{regime}/c={self.c:g}/nu={self.nu:g}"

    @property
    def u_params(self) -> geo.MaternParams:
        return geo.MaternParams(sigma2=U_SIGMA2, theta=U_THETA, nu=self.nu)


@dataclass(frozen=True)
class MethodMetrics:
    """Per-method summary over the successful replicates of one scenario."""

    method: str
    bias: float
    sd: float
    mean_se: float
    coverage: float
    mean_abs_smd_u: float


@dataclass(frozen=True)
class ScenarioMetrics:
    """Aggregated results of one scenario.

    ``detail`` keeps the per-replicate arrays behind the summaries
    (estimates, standard errors, interval bounds, recovered-field
    correlations, balance values) keyed by ``{method}_estimate`` and
    friends; reports use only the summary fields.
    """

    scenario: Scenario
    per_method: dict[str, MethodMetrics]
    corr_u_mean: float
    smd_u_unadj_mean: float
    n_failed: int
    failures: tuple[str, ...]
    detail: dict[str, np.ndarray] = field(repr=False)


def scenario_coords(sc: Scenario) -> np.ndarray:
    """Locations shared by all replicates: uniform on [0, domain]^2."""
    rng = np.random.default_rng(np.random.SeedSequence(sc.seed, spawn_key=(0,)))
    return rng.uniform(0.0, sc.domain, size=(sc.n, 2))


def _field_factor(coords: np.ndarray, params: geo.MaternParams) -> np.ndarray:
    sigma = geo.cov_matrix(coords, params, include_nugget=False)
    factor, _ = geo.cholesky_factor(
        sigma, jitter=geo.DEFAULT_JITTER * params.sigma2
    )
    return factor


class _Sampler:
    """Per-scenario generator with the field factorizations precomputed."""

    def __init__(self, sc: Scenario) -> None:
        self.sc = sc
        self.coords = scenario_coords(sc)
        self.chol_u = _field_factor(self.coords, sc.u_params)
        if sc.spatial_covariates:
            self.chol_z3 = _field_factor(self.coords, Z3_PARAMS)
            self.chol_z4 = _field_factor(self.coords, Z4_PARAMS)

    def dataset(
        self, rep: int, ps_intercept: float | None = None, ps_coef=None
    ) -> tuple[SpatialDataset, np.ndarray]:
        """Draw replicate ``rep``; returns the dataset and the true field.

        ``ps_intercept`` and ``ps_coef`` override the treatment model's
        parameters (useful for calibration checks); confounding strength
        always comes from the scenario.
        """
        sc = self.sc
        n = sc.n
        if ps_intercept is None:
            ps_intercept = PS_INTERCEPT
        ps_coef = PS_COEF if ps_coef is None else np.asarray(ps_coef, dtype=float)
        rng = np.random.default_rng(
            np.random.SeedSequence(sc.seed, spawn_key=(1, rep))
        )
        u = self.chol_u @ rng.standard_normal(n)
        if sc.spatial_covariates:
            z12 = rng.standard_normal((n, 2))
            z3 = self.chol_z3 @ rng.standard_normal(n)
            z4 = self.chol_z4 @ rng.standard_normal(n)
            z = np.column_stack([z12, z3, z4])
        else:
            z = rng.standard_normal((n, 4))
        a = rng.binomial(1, expit(ps_intercept + z @ ps_coef + sc.c * u))
        mean = a * TRUE_ATT + z @ GAMMA_TRUE + u
        if sc.regime == "misspec-outcome":
            mean = mean + INTERACTION_COEF * z[:, 2] * z[:, 3]
        y = mean + rng.normal(0.0, math.sqrt(NOISE_VAR), n)
        data = SpatialDataset(
            coords=self.coords, y=y, a=a, z=z, covariate_names=_COVARIATE_NAMES
        )
        return data, u


def generate_dataset(
    sc: Scenario, rep: int, ps_intercept: float | None = None, ps_coef=None
) -> tuple[SpatialDataset, np.ndarray]:
    """Dataset and true latent field for replicate ``rep`` of a scenario."""
    return _Sampler(sc).dataset(rep, ps_intercept=ps_intercept, ps_coef=ps_coef)


def _spawned_seed(seed: int, key: tuple[int, ...]) -> int:
    """Stable integer sub-seed for a keyed stream under a master seed."""
    ss = np.random.SeedSequence(seed, spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _safe_corr(x: np.ndarray, y: np.ndarray) -> float:
    if float(np.std(x)) < 1e-12 or float(np.std(y)) < 1e-12:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


def _record_result(record: dict, method: str, res: AttResult) -> None:
    record[f"{method}_estimate"] = res.estimate
    record[f"{method}_se"] = float("nan") if res.se is None else res.se
    record[f"{method}_ci_lower"] = (
        float("nan") if res.ci_lower is None else res.ci_lower
    )
    record[f"{method}_ci_upper"] = (
        float("nan") if res.ci_upper is None else res.ci_upper
    )


def _replicate_worker(state: dict, rep: int):
    """Run every requested method on replicate ``rep``.

    Returns ``("ok", rep, record)`` or ``("fail", rep, message)``; the
    record is a flat dict of floats so it crosses process boundaries
    cheaply.
    """
    sampler: _Sampler = state["sampler"]
    sc = sampler.sc
    try:
        data, u = sampler.dataset(rep)
        if sc.regime == "misspec-both":
            analysis = data.subset_covariates(("z1", "z2", "z3"))
        else:
            analysis = data
        record: dict[str, float] = {"smd_u_unadj": abs(smd(u, data.a))}

        outcome_fit = None
        if "gls" in sc.methods or "recoveru" in sc.methods:
            outcome_fit = irwls_covariance_fit(analysis)

        if "naive" in sc.methods:
            design, names = propensity_design(analysis)
            ps = logistic_fit(design, analysis.a, coef_names=names)
            res = att_iptw(analysis, ps, normalize=True)
            _record_result(record, "naive", res)
            weights = att_weights(analysis.a, ps.scores)
            record["naive_smd_u"] = abs(smd(u, analysis.a, weights=weights))

        if "gls" in sc.methods:
            res = AttResult.from_se(
                "gls",
                outcome_fit.beta_hat,
                outcome_fit.beta_se,
                analysis.n_treated,
                analysis.n_control,
            )
            _record_result(record, "gls", res)
            record["gls_smd_u"] = float("nan")

        if "gold" in sc.methods:
            gold = fit_gold(analysis, u)
            res = gold.att
            if sc.bootstrap_replicates:
                boot = gold_bootstrap(
                    analysis,
                    gold,
                    sc.u_params,
                    BootstrapSpec(
                        replicates=sc.bootstrap_replicates,
                        seed=_spawned_seed(sc.seed, (3, rep)),
                    ),
                )
                res = AttResult.from_se(
                    "gold", res.estimate, boot.se,
                    analysis.n_treated, analysis.n_control,
                )
            _record_result(record, "gold", res)
            weights = att_weights(analysis.a, gold.propensity.scores)
            record["gold_smd_u"] = abs(smd(u, analysis.a, weights=weights))

        if "recoveru" in sc.methods:
            pipe = fit_recoveru(analysis, outcome_fit=outcome_fit)
            record["corr_u"] = _safe_corr(u, pipe.recovered.u_hat)
            res = pipe.att
            if sc.bootstrap_replicates:
                boot = parametric_bootstrap(
                    analysis,
                    pipe.outcome,
                    pipe.propensity,
                    BootstrapSpec(
                        replicates=sc.bootstrap_replicates,
                        seed=_spawned_seed(sc.seed, (2, rep)),
                    ),
                    refit_covariance=(sc.bootstrap_mode == "full"),
                )
                res = AttResult.from_se(
                    "recoveru", res.estimate, boot.se,
                    analysis.n_treated, analysis.n_control,
                )
            _record_result(record, "recoveru", res)
            weights = att_weights(analysis.a, pipe.propensity.scores)
            record["recoveru_smd_u"] = abs(smd(u, analysis.a, weights=weights))

        return ("ok", rep, record)
    except RecoveruError as exc:
        return ("fail", rep, f"replicate {rep}: {type(exc).__name__}: {exc}")


def _finite_mean(values: np.ndarray) -> float:
    finite = values[np.isfinite(values)]
    return float(finite.mean()) if finite.size else float("nan")


def _summarize_method(method: str, detail: dict) -> MethodMetrics:
    est = detail[f"{method}_estimate"]
    lo = detail[f"{method}_ci_lower"]
    hi = detail[f"{method}_ci_upper"]
    has_ci = np.isfinite(lo) & np.isfinite(hi)
    if has_ci.any():
        covered = (lo[has_ci] <= TRUE_ATT) & (TRUE_ATT <= hi[has_ci])
        coverage = float(100.0 * covered.mean())
    else:
        coverage = float("nan")
    return MethodMetrics(
        method=method,
        bias=float(est.mean() - TRUE_ATT),
        sd=float(np.std(est, ddof=1)) if est.size > 1 else float("nan"),
        mean_se=_finite_mean(detail[f"{method}_se"]),
        coverage=coverage,
        mean_abs_smd_u=_finite_mean(detail[f"{method}_smd_u"]),
    )


def run_scenario(sc: Scenario, n_jobs: int = 1) -> ScenarioMetrics:
    """Run all replicates of a scenario and aggregate method metrics.

    Results are identical for any ``n_jobs``: every replicate derives its
    streams from the scenario seed and its own index.

    Raises
    ------
    ScenarioFailureError
        If more than 10% of replicates fail.
    """
    sampler = _Sampler(sc)
    results = map_with_state(
        _replicate_worker, {"sampler": sampler}, range(sc.replicates),
        workers=n_jobs,
    )
    records = [(rep, rec) for tag, rep, rec in results if tag == "ok"]
    failures = tuple(msg for tag, _, msg in results if tag == "fail")
    if len(failures) > MAX_REPLICATE_FAILURES * sc.replicates:
        raise ScenarioFailureError(
            f"scenario {sc.label}: {len(failures)} of {sc.replicates} "
            f"replicates failed (first: {failures[0]})"
        )

    keys = records[0][1].keys()
    detail = {
        key: np.array([rec[key] for _, rec in records], dtype=float)
        for key in keys
    }
    detail["rep"] = np.array([rep for rep, _ in records], dtype=float)
    per_method = {m: _summarize_method(m, detail) for m in sc.methods}
    return ScenarioMetrics(
        scenario=sc,
        per_method=per_method,
        corr_u_mean=_finite_mean(detail["corr_u"])
        if "recoveru" in sc.methods else float("nan"),
        smd_u_unadj_mean=_finite_mean(detail["smd_u_unadj"]),
        n_failed=len(failures),
        failures=failures,
        detail=detail,
    )


def grid_scenarios(
    regime: str = "correct",
    spatial_covariates: bool = False,
    n: int = 500,
    replicates: int = 500,
    seed: int = 0,
    methods: tuple[str, ...] = METHODS,
    bootstrap_replicates: int = 0,
    bootstrap_mode: str = "fast",
) -> list[Scenario]:
    """The full 3 x 4 (confounding x smoothness) grid for one regime.

    All cells share the seed, so they also share locations and base
    draws; differences between cells are then purely structural.
    """
    return [
        Scenario(
            c=c,
            nu=nu,
            regime=regime,
            spatial_covariates=spatial_covariates,
            n=n,
            replicates=replicates,
            seed=seed,
            methods=methods,
            bootstrap_replicates=bootstrap_replicates,
            bootstrap_mode=bootstrap_mode,
        )
        for c in C_GRID
        for nu in NU_GRID
    ]


CASE_STUDY_U_PARAMS = geo.MaternParams(sigma2=1.0, theta=5.0, nu=0.7)


def case_study_dataset(
    n: int = 473, p: int = 18, seed: int = 0, domain: float = 20.0
) -> tuple[SpatialDataset, np.ndarray]:
    """An observational-study-shaped dataset for exercising the pipeline.

    Lays out ``n`` sites with a binary intervention, a continuous
    outcome, and ``p`` mixed covariates: four binary indicators, three
    spatially structured continuous variables, and the rest iid normal.
    A smooth unmeasured field confounds both the intervention and the
    outcome, so spatial adjustment has something real to find.

    Returns the dataset and the true field; simulated case studies can
    then still be scored against the truth.
    """
    if n < 20:
        raise ParameterError(f"need at least 20 sites, got {n}")
    if p < 8:
        raise ParameterError(f"need at least 8 covariates, got {p}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(9,)))
    coords = rng.uniform(0.0, domain, size=(n, 2))
    u = _field_factor(coords, CASE_STUDY_U_PARAMS) @ rng.standard_normal(n)

    columns = []
    for theta in (3.0, 7.0, 4.0):
        params = geo.MaternParams(sigma2=1.0, theta=theta, nu=0.5)
        columns.append(_field_factor(coords, params) @ rng.standard_normal(n))
    columns.append(rng.binomial(1, 0.5, n).astype(float))
    columns.append(rng.binomial(1, 0.3, n).astype(float))
    columns.append(rng.binomial(1, expit(columns[0]), n).astype(float))
    columns.append(rng.binomial(1, 0.15, n).astype(float))
    while len(columns) < p:
        columns.append(rng.standard_normal(n))
    z = np.column_stack(columns[:p])
    names = tuple(f"z{i + 1:02d}" for i in range(p))

    lam = np.zeros(p)
    lam[:8] = (0.3, -0.2, 0.5, 0.4, -0.3, 0.2, 0.25, -0.15)
    a = rng.binomial(1, expit(-0.9 + z @ lam + u))
    gamma = np.zeros(p)
    gamma[:8] = (0.8, -0.5, 1.1, 0.6, -0.4, 0.3, 0.5, -0.25)
    y = a * 1.5 + z @ gamma + u + rng.normal(0.0, math.sqrt(NOISE_VAR), n)
    data = SpatialDataset(coords=coords, y=y, a=a, z=z, covariate_names=names)
    return data, u
