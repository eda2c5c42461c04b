"""Parametric bootstrap uncertainty for the doubly robust estimators.

Each replicate redraws the latent field from its fitted covariance,
redraws treatment from the fitted propensity model with the simulated
field in place of the recovered one, redraws the outcome from the fitted
regression, and reruns the estimation pipeline. The standard error is
the standard deviation of the replicate estimates and the interval is
the usual normal one around the original point estimate.

Replicates can rerun the covariance fit from scratch (the default) or
freeze the fitted covariance parameters and only refit coefficients,
recovery, and propensity. The frozen mode is far cheaper and is what the
simulation harness uses at reduced replicate counts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve
from scipy.spatial.distance import pdist, squareform
from scipy.special import expit

from . import geo
from .errors import (
    BootstrapInstabilityError,
    DegenerateDataError,
    ParameterError,
    RecoveruError,
)
from .estimators import (
    GoldFit,
    PropensityFit,
    att_dr,
    fit_gold,
    fit_recoveru,
    logistic_fit,
    propensity_design,
)
from .parallel import map_with_state
from .recovery import recover_u, recovery_smoother
from .spatial import OutcomeFit, SpatialDataset, _outcome_design

logger = logging.getLogger(__name__)

#: Replicate failure fraction beyond which the standard error is refused.
MAX_FAILURE_RATE = 0.2


@dataclass(frozen=True)
class BootstrapSpec:
    """How to run a parametric bootstrap.

    Attributes
    ----------
    replicates : int
        Number of replicates, at least 2 (default 500).
    seed : int
        Master seed; per-replicate streams are spawned from it, so
        results do not depend on the worker count.
    workers : int
        Process count for replicate evaluation.
    """

    replicates: int = 500
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.replicates < 2:
            raise ParameterError(
                f"need at least 2 bootstrap replicates, got {self.replicates}"
            )
        if self.workers < 1:
            raise ParameterError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True)
class BootstrapResult:
    """Replicate estimates and the interval they imply."""

    estimate: float
    se: float
    ci_lower: float
    ci_upper: float
    replicate_estimates: np.ndarray
    n_failed: int


def _aggregate(point: float, outcomes, spec: BootstrapSpec) -> BootstrapResult:
    estimates = np.array([v for ok, v in outcomes if ok], dtype=float)
    failures = [v for ok, v in outcomes if not ok]
    n_failed = len(failures)
    if n_failed:
        logger.warning(
            "bootstrap: %d of %d replicates failed (first: %s)",
            n_failed, spec.replicates, failures[0],
        )
    if n_failed > MAX_FAILURE_RATE * spec.replicates or estimates.size < 2:
        raise BootstrapInstabilityError(
            f"{n_failed} of {spec.replicates} bootstrap replicates failed; "
            f"the standard error would not be trustworthy"
        )
    # Sorting first makes the reduction independent of replicate order.
    se = float(np.std(np.sort(estimates), ddof=1))
    return BootstrapResult(
        estimate=point,
        se=se,
        ci_lower=point - 1.96 * se,
        ci_upper=point + 1.96 * se,
        replicate_estimates=estimates,
        n_failed=n_failed,
    )


def _simulate_arrays(state: dict, rng: np.random.Generator):
    """Draw (u_sim, a_sim, y_sim) from the fitted generative model."""
    n = state["n"]
    chol_u = state["chol_u"]
    u_sim = chol_u @ rng.standard_normal(n) if chol_u is not None else np.zeros(n)
    lin = state["ps_base"] + state["ps_u_coef"] * u_sim
    a_sim = rng.binomial(1, expit(lin)).astype(float)
    noise = rng.normal(0.0, state["sigma_e"], n)
    y_sim = a_sim * state["beta_hat"] + state["control_mean"] + u_sim + noise
    return u_sim, a_sim, y_sim


def _recoveru_replicate(state: dict, seed) -> tuple[bool, float | str]:
    rng = np.random.default_rng(seed)
    try:
        _, a_sim, y_sim = _simulate_arrays(state, rng)
        n_treated = int(a_sim.sum())
        if n_treated == 0 or n_treated == state["n"]:
            raise DegenerateDataError("simulated treatment is one-armed")
        sim = SpatialDataset(
            coords=state["coords"],
            y=y_sim,
            a=a_sim.astype(int),
            z=state["z"],
            covariate_names=state["covariate_names"],
        )
        if state["refit_covariance"]:
            estimate = fit_recoveru(sim, intercept=state["intercept"]).att.estimate
        else:
            estimate = _frozen_recoveru_estimate(state, sim)
        return True, float(estimate)
    except RecoveruError as exc:
        return False, f"{type(exc).__name__}: {exc}"


def _frozen_recoveru_estimate(state: dict, sim: SpatialDataset) -> float:
    """Recovery pipeline with covariance parameters held fixed.

    Coefficients, recovery, and the propensity model are refitted on the
    simulated data; the error covariance factor and the recovery smoother
    are reused from the original fit.
    """
    x, _ = _outcome_design(sim, state["intercept"])
    a_col = x[:, 0]
    rest = x[:, 1:]
    if state["v_factor"] is None:
        vinv_a = a_col
        vinv_rest = rest
        vinv_y = sim.y
    else:
        factor = (state["v_factor"], True)
        vinv_a = cho_solve(factor, a_col, check_finite=False)
        vinv_rest = state["vinv_rest"]
        vinv_y = cho_solve(factor, sim.y, check_finite=False)
    # Assemble X' V^-1 X and X' V^-1 y from the fixed and changing blocks.
    k = x.shape[1]
    xtv_x = np.empty((k, k))
    xtv_x[0, 0] = a_col @ vinv_a
    xtv_x[0, 1:] = xtv_x[1:, 0] = rest.T @ vinv_a
    xtv_x[1:, 1:] = state["rest_tv_rest"]
    xtv_y = np.concatenate(([a_col @ vinv_y], rest.T @ vinv_y))
    coef = solve(xtv_x, xtv_y, assume_a="pos")
    resid = sim.y - x @ coef
    u_hat = state["smoother"] @ resid
    if float(np.std(u_hat)) < 1e-12:
        design, names = propensity_design(sim)
    else:
        design, names = propensity_design(sim, extra=u_hat)
    ps = logistic_fit(design, sim.a, coef_names=names)
    mu0 = rest @ coef[1:] + u_hat
    return att_dr(sim, ps, mu0).estimate


def _prepare_state(
    data: SpatialDataset,
    fit: OutcomeFit,
    ps: PropensityFit,
    refit_covariance: bool,
    intercept: bool,
) -> dict:
    n = data.n
    params = fit.matern
    state = {
        "coords": data.coords,
        "z": data.z,
        "covariate_names": data.covariate_names,
        "n": n,
        "beta_hat": fit.beta_hat,
        "control_mean": fit.predict_control(data),
        "sigma_e": float(np.sqrt(params.nugget)),
        "refit_covariance": refit_covariance,
        "intercept": intercept,
    }
    if params.sigma2 > 0.0:
        sigma_u = geo.cov_matrix(data.coords, params, include_nugget=False)
        chol_u, _ = geo.cholesky_factor(
            sigma_u, jitter=geo.DEFAULT_JITTER * params.sigma2
        )
        state["chol_u"] = chol_u
    else:
        state["chol_u"] = None

    # The fitted propensity model, with the simulated field standing in
    # for the recovered one when that term exists.
    if "u_hat" in ps.coef_names:
        u_idx = ps.coef_names.index("u_hat")
        state["ps_u_coef"] = float(ps.coef[u_idx])
        base_design = np.delete(ps.design, u_idx, axis=1)
        base_coef = np.delete(ps.coef, u_idx)
        state["ps_base"] = base_design @ base_coef
    else:
        state["ps_u_coef"] = 0.0
        state["ps_base"] = ps.design @ ps.coef

    if not refit_covariance:
        smoother, _, _ = recovery_smoother(data.coords, params)
        state["smoother"] = smoother
        x_full, _ = _outcome_design(data, intercept)
        rest = x_full[:, 1:]
        total_var = params.sigma2 + params.nugget
        if total_var == 0.0:
            # Fully degenerate covariance: fall back to identity (OLS).
            state["v_factor"] = None
            state["vinv_rest"] = rest
            state["rest_tv_rest"] = rest.T @ rest
        else:
            vmat = squareform(geo.matern_cov(pdist(data.coords), params))
            np.fill_diagonal(vmat, total_var)
            v_factor, _ = geo.cholesky_factor(
                vmat, jitter=geo.DEFAULT_JITTER * max(total_var, 1e-12)
            )
            vinv_rest = cho_solve((v_factor, True), rest, check_finite=False)
            state["v_factor"] = v_factor
            state["vinv_rest"] = vinv_rest
            state["rest_tv_rest"] = rest.T @ vinv_rest
    return state


def parametric_bootstrap(
    data: SpatialDataset,
    fit: OutcomeFit,
    ps: PropensityFit,
    spec: BootstrapSpec,
    refit_covariance: bool = True,
    intercept: bool = False,
) -> BootstrapResult:
    """Bootstrap the recovery pipeline's doubly robust ATT.

    Parameters
    ----------
    data : SpatialDataset
        The original data the models were fitted on.
    fit : OutcomeFit
        Fitted outcome regression with covariance parameters.
    ps : PropensityFit
        Fitted propensity model from the recovery pipeline.
    spec : BootstrapSpec
    refit_covariance : bool, optional
        Rerun the covariance fit inside every replicate (default), or
        freeze the fitted parameters and refit only coefficients,
        recovery, and propensity.
    intercept : bool, optional
        Must match the option used for the original fit.

    Raises
    ------
    BootstrapInstabilityError
        If more than 20% of replicates fail.
    """
    recovered = recover_u(fit, data.coords)
    mu0 = fit.predict_control(data) + recovered.u_hat
    point = att_dr(data, ps, mu0).estimate

    state = _prepare_state(data, fit, ps, refit_covariance, intercept)
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.replicates)
    outcomes = map_with_state(
        _recoveru_replicate, state, seeds, workers=spec.workers
    )
    return _aggregate(point, outcomes, spec)


# ---------------------------------------------------------------------------
# gold benchmark bootstrap
# ---------------------------------------------------------------------------

def _gold_replicate(state: dict, seed) -> tuple[bool, float | str]:
    rng = np.random.default_rng(seed)
    try:
        n = state["n"]
        chol_u = state["chol_u"]
        u_sim = chol_u @ rng.standard_normal(n) if chol_u is not None else np.zeros(n)
        lin = state["ps_base"] + state["ps_u_coef"] * u_sim
        a_sim = rng.binomial(1, expit(lin)).astype(float)
        mean = (
            a_sim * state["beta_hat"]
            + state["z"] @ state["gamma_z"]
            + state["u_coef"] * u_sim
        )
        y_sim = mean + rng.normal(0.0, state["sigma_e"], n)
        n_treated = int(a_sim.sum())
        if n_treated == 0 or n_treated == n:
            raise DegenerateDataError("simulated treatment is one-armed")
        sim = SpatialDataset(
            coords=state["coords"],
            y=y_sim,
            a=a_sim.astype(int),
            z=state["z"],
            covariate_names=state["covariate_names"],
        )
        return True, float(fit_gold(sim, u_sim).att.estimate)
    except RecoveruError as exc:
        return False, f"{type(exc).__name__}: {exc}"


def gold_bootstrap(
    data: SpatialDataset,
    fit: GoldFit,
    u_params: geo.MaternParams,
    spec: BootstrapSpec,
) -> BootstrapResult:
    """Parametric bootstrap for the known-confounder benchmark.

    The latent field is redrawn from ``u_params`` (known in simulation
    settings), treatment from the fitted propensity model, and the
    outcome from the fitted regression; the benchmark is refitted on
    each replicate.
    """
    if u_params.sigma2 > 0.0:
        sigma_u = geo.cov_matrix(data.coords, u_params, include_nugget=False)
        chol_u, _ = geo.cholesky_factor(
            sigma_u, jitter=geo.DEFAULT_JITTER * u_params.sigma2
        )
    else:
        chol_u = None
    u_idx = fit.propensity.coef_names.index("u_true")
    base_design = np.delete(fit.propensity.design, u_idx, axis=1)
    base_coef = np.delete(fit.propensity.coef, u_idx)
    state = {
        "coords": data.coords,
        "z": data.z,
        "covariate_names": data.covariate_names,
        "n": data.n,
        "chol_u": chol_u,
        "ps_base": base_design @ base_coef,
        "ps_u_coef": float(fit.propensity.coef[u_idx]),
        "beta_hat": float(fit.coef[0]),
        "gamma_z": fit.coef[1:-1],
        "u_coef": float(fit.coef[-1]),
        "sigma_e": float(np.sqrt(fit.sigma_e2)),
    }
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.replicates)
    outcomes = map_with_state(
        _gold_replicate, state, seeds, workers=spec.workers
    )
    return _aggregate(fit.att.estimate, outcomes, spec)
