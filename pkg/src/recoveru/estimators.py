"""Propensity scores, ATT estimators, and covariate balance.

Implements four estimation strategies over a :class:`SpatialDataset`:

- ``naive``: logistic propensity on the measured covariates, inverse
  probability of treatment weighting.
- ``gls``: the treatment coefficient of the spatial outcome regression.
- ``recoveru``: recover the latent spatial confounder from the outcome
  residuals, add it to both the propensity and the control-mean model,
  and combine them in a doubly robust estimator.
- ``gold``: the doubly robust estimator with the true confounder, for
  simulation benchmarks only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import LinAlgError, solve
from scipy.special import expit

from .errors import (
    DegenerateDataError,
    ExtremeWeightError,
    FitError,
    MissingInputError,
    ParameterError,
    SeparationError,
    SingularDesignError,
    ValidationError,
)
from .recovery import RecoveredConfounder, recover_u
from .spatial import OutcomeFit, SpatialDataset, gls_fit, irwls_covariance_fit

#: Normal quantile used for all 95% confidence intervals.
Z_95 = 1.96

#: L2 norm of the (internally standardized) coefficients beyond which a
#: logistic fit is declared separated.
SEPARATION_NORM = 30.0

#: Control units with propensity score at or above 1 minus this bound
#: make inverse weights unusable.
EXTREME_SCORE_MARGIN = 1e-12

METHODS = ("naive", "gls", "gold", "recoveru")


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttResult:
    """A point estimate of the ATT with optional normal interval."""

    method: str
    estimate: float
    se: float | None
    ci_lower: float | None
    ci_upper: float | None
    n_treated: int
    n_control: int

    @classmethod
    def from_se(cls, method, estimate, se, n_treated, n_control):
        """Build a result with a symmetric 95% normal interval."""
        if se is None:
            return cls(method, float(estimate), None, None, None,
                       n_treated, n_control)
        se = float(se)
        return cls(
            method=method,
            estimate=float(estimate),
            se=se,
            ci_lower=float(estimate) - Z_95 * se,
            ci_upper=float(estimate) + Z_95 * se,
            n_treated=n_treated,
            n_control=n_control,
        )


@dataclass(frozen=True)
class PropensityFit:
    """Fitted logistic propensity model.

    ``scores`` always satisfies ``scores == expit(design @ coef)`` for the
    stored design and coefficients and stays strictly inside (0, 1).
    """

    coef: np.ndarray
    coef_names: tuple[str, ...]
    scores: np.ndarray
    converged: bool
    n_iter: int
    design: np.ndarray

    def coef_for(self, name: str) -> float:
        if name not in self.coef_names:
            raise ParameterError(f"no coefficient named {name!r}")
        return float(self.coef[self.coef_names.index(name)])


# ---------------------------------------------------------------------------
# logistic regression
# ---------------------------------------------------------------------------

def logistic_fit(x, a, max_iter: int = 50, tol: float = 1e-10,
                 coef_names=None) -> PropensityFit:
    """Logistic regression by Newton iteration (iterative reweighting).

    The design is standardized internally for conditioning; reported
    coefficients are on the original scale. Convergence is declared when
    the largest absolute change in fitted probabilities between
    iterations drops below ``tol``; hitting ``max_iter`` first returns a
    result flagged ``converged=False``.

    Parameters
    ----------
    x : ndarray, shape (n, k)
        Full design including any intercept column.
    a : ndarray, shape (n,)
        Binary response.
    coef_names : sequence of str, optional

    Raises
    ------
    SeparationError
        When coefficients diverge (L2 norm of the standardized
        coefficients above :data:`SEPARATION_NORM`) or fitted
        probabilities saturate at 0 or 1, both signs of separation.
    SingularDesignError
        On a rank-deficient design.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ParameterError(f"design must be 2-d, got shape {x.shape}")
    a = np.asarray(a, dtype=float).ravel()
    n, k = x.shape
    if a.shape[0] != n:
        raise ParameterError(f"{a.shape[0]} responses for {n} design rows")
    if not np.all(np.isin(a, (0.0, 1.0))):
        raise ValidationError("logistic response must be binary 0/1")
    if np.all(a == a[0]):
        raise DegenerateDataError(
            "response has a single class; both classes are needed to fit "
            "a propensity model"
        )
    if np.linalg.matrix_rank(x) < k:
        raise SingularDesignError("propensity design is rank deficient")
    if coef_names is None:
        coef_names = tuple(f"x{j}" for j in range(k))
    else:
        coef_names = tuple(coef_names)
        if len(coef_names) != k:
            raise ParameterError(f"{len(coef_names)} names for {k} columns")

    # Standardize non-constant columns; centering is only possible when a
    # constant column is present to absorb the offset.
    scale = x.std(axis=0)
    constant = scale < 1e-12
    center = x.mean(axis=0) if np.any(constant) else np.zeros(k)
    center[constant] = 0.0
    safe_scale = np.where(constant, 1.0, scale)
    xs = (x - center) / safe_scale

    beta = np.zeros(k)
    prev_scores = np.full(n, 0.5)
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        eta = xs @ beta
        e = expit(eta)
        w = e * (1.0 - e)
        grad = xs.T @ (a - e)
        hess = (xs * w[:, None]).T @ xs
        try:
            step = solve(hess, grad, assume_a="pos")
        except (LinAlgError, np.linalg.LinAlgError) as exc:
            if float(np.linalg.norm(beta)) > SEPARATION_NORM / 3.0:
                raise SeparationError(
                    "weighted design became singular while coefficients "
                    "grew; the groups appear separable"
                ) from exc
            raise FitError("singular weighted design in logistic fit") from exc
        beta = beta + step
        if float(np.linalg.norm(beta)) > SEPARATION_NORM:
            raise SeparationError(
                f"logistic coefficients diverged (norm > {SEPARATION_NORM:g}); "
                f"treatment groups appear separable"
            )
        scores = expit(xs @ beta)
        delta = float(np.max(np.abs(scores - prev_scores)))
        prev_scores = scores
        if delta < tol:
            converged = True
            break

    coef = beta / safe_scale
    offset = -float(np.sum(beta * center / safe_scale))
    if np.any(constant):
        # Fold the centering offset into the (single) constant column.
        j = int(np.nonzero(constant)[0][0])
        coef[j] = beta[j] + offset / x[0, j]
    scores = expit(x @ coef)
    if np.any(scores <= 0.0) or np.any(scores >= 1.0):
        raise SeparationError(
            "fitted probabilities saturated at 0 or 1; treatment groups "
            "appear separable"
        )
    return PropensityFit(
        coef=coef,
        coef_names=coef_names,
        scores=scores,
        converged=converged,
        n_iter=n_iter,
        design=x,
    )


def propensity_design(data: SpatialDataset,
                      extra: np.ndarray | None = None):
    """Design ``[1 | Z]`` with an optional extra trailing column."""
    cols = [np.ones(data.n), data.z]
    names = ["(intercept)", *data.covariate_names]
    if extra is not None:
        cols.append(np.asarray(extra, dtype=float).reshape(-1, 1))
        names.append("u_hat")
    return np.column_stack(cols), tuple(names)


# ---------------------------------------------------------------------------
# ATT estimators
# ---------------------------------------------------------------------------

def _require_treated(data: SpatialDataset) -> None:
    if data.n_treated == 0:
        raise DegenerateDataError("no treated units; the ATT is undefined")


def _control_odds(a: np.ndarray, scores: np.ndarray) -> np.ndarray:
    controls = a == 0
    if np.any(scores[controls] >= 1.0 - EXTREME_SCORE_MARGIN):
        worst = float(scores[controls].max())
        raise ExtremeWeightError(
            f"a control unit has propensity score {worst!r}; its inverse "
            f"weight is unusable"
        )
    return scores / (1.0 - scores)


def att_weights(a, scores) -> np.ndarray:
    """ATT weights: 1 for treated units, ``e/(1-e)`` for controls."""
    a = np.asarray(a)
    scores = np.asarray(scores, dtype=float)
    odds = _control_odds(a, scores)
    return np.where(a == 1, 1.0, odds)


def att_iptw(data: SpatialDataset, ps: PropensityFit,
             normalize: bool = False) -> AttResult:
    """ATT by inverse probability of treatment weighting.

    The defining estimator is
    ``mean(A*Y) - mean(e*(1-A)*Y / (1-e))``,
    with a sandwich standard error that treats the propensity
    coefficients as estimated. With ``normalize=True`` the weighted
    means are normalized within each arm instead
    (``sum(A*Y)/sum(A) - sum(w*(1-A)*Y)/sum(w*(1-A))`` with ``w = e/(1-e)``),
    which is the form whose expectation is the ATT itself.

    Raises
    ------
    ExtremeWeightError
        If any control unit's score is within 1e-12 of 1.
    DegenerateDataError
        If there are no treated units.
    """
    _require_treated(data)
    a = data.a.astype(float)
    y = data.y
    e = ps.scores
    odds = _control_odds(data.a, e)
    x = ps.design
    n = data.n

    # Shared sandwich pieces: logistic score s_i and information H.
    s_mat = x * (a - e)[:, None]
    hess = (x * (e * (1.0 - e))[:, None]).T @ x / n

    if not normalize:
        w0y = odds * (1.0 - a) * y
        estimate = float(np.mean(a * y) - np.mean(w0y))
        g = a * y - w0y - estimate
        c_vec = (x * w0y[:, None]).mean(axis=0)
        adj = s_mat @ solve(hess, c_vec, assume_a="pos")
        phi = g - adj
        se = float(np.sqrt(np.sum(phi * phi)) / n)
    else:
        w0 = odds * (1.0 - a)
        mu1 = float(np.sum(a * y) / np.sum(a))
        sum_w0 = float(np.sum(w0))
        if sum_w0 <= 0.0:
            raise DegenerateDataError(
                "no control units carry weight; the normalized control "
                "mean is undefined"
            )
        mu0 = float(np.sum(w0 * y) / sum_w0)
        estimate = mu1 - mu0
        pi1 = float(np.mean(a))
        pi0 = sum_w0 / n
        if_mu1 = a * (y - mu1) / pi1
        psi0 = w0 * (y - mu0)
        c0 = (x * psi0[:, None]).mean(axis=0)
        adj = s_mat @ solve(hess, c0, assume_a="pos")
        if_mu0 = (psi0 + adj) / pi0
        phi = if_mu1 - if_mu0
        se = float(np.sqrt(np.sum(phi * phi)) / n)

    return AttResult.from_se("iptw", estimate, se,
                             data.n_treated, data.n_control)


def att_dr(data: SpatialDataset, ps: PropensityFit, mu0,
           method: str = "dr") -> AttResult:
    """Doubly robust ATT combining scores with a control-mean model.

    Evaluates ``sum((A_i - (1-A_i) e_i) * (Y_i - mu0_i)) / sum(A_i)``.
    No closed-form standard error is attached; use the parametric
    bootstrap for uncertainty.

    Parameters
    ----------
    data : SpatialDataset
    ps : PropensityFit
    mu0 : ndarray
        Modelled control mean per unit.
    method : str, optional
        Label stored on the result.
    """
    _require_treated(data)
    mu0 = np.asarray(mu0, dtype=float).ravel()
    if mu0.shape[0] != data.n:
        raise ParameterError(f"mu0 length {mu0.shape[0]} for {data.n} rows")
    a = data.a.astype(float)
    contrib = (a - (1.0 - a) * ps.scores) * (data.y - mu0)
    estimate = float(np.sum(contrib) / np.sum(a))
    return AttResult.from_se(method, estimate, None,
                             data.n_treated, data.n_control)


# ---------------------------------------------------------------------------
# balance
# ---------------------------------------------------------------------------

def smd(values, a, weights=None) -> float:
    """Standardized mean difference between treated and control groups.

    ``(mean_t - mean_c) / sqrt((var_t + var_c) / 2)`` with, when weights
    are supplied, weighted means and frequency-weighted variances
    (``sum w (x - m)^2 / (sum w - 1)``, matching the unweighted ddof-1
    variance at unit weights).

    Raises
    ------
    DegenerateDataError
        If either group is empty, carries no weight, or the pooled
        standard deviation is zero.
    """
    v = np.asarray(values, dtype=float).ravel()
    a = np.asarray(a).ravel()
    if weights is None:
        weights = np.ones_like(v)
    else:
        weights = np.asarray(weights, dtype=float).ravel()
        if np.any(weights < 0):
            raise ParameterError("weights must be nonnegative")

    stats = []
    for group in (1, 0):
        mask = a == group
        if not np.any(mask):
            raise DegenerateDataError(
                f"group {group} is empty; SMD is undefined"
            )
        w = weights[mask]
        sw = float(np.sum(w))
        if sw <= 1.0:
            raise DegenerateDataError(
                f"group {group} carries total weight {sw:g} <= 1; "
                f"its weighted variance is undefined"
            )
        m = float(np.sum(w * v[mask]) / sw)
        var = float(np.sum(w * (v[mask] - m) ** 2) / (sw - 1.0))
        stats.append((m, var))
    (m_t, var_t), (m_c, var_c) = stats
    pooled = math.sqrt((var_t + var_c) / 2.0)
    if pooled == 0.0:
        raise DegenerateDataError("zero pooled standard deviation")
    return (m_t - m_c) / pooled


@dataclass(frozen=True)
class BalanceTable:
    """Per-variable standardized mean differences before and after
    weighting.

    ``adjusted`` maps a method label to the weighted SMDs, aligned with
    ``variables``.
    """

    variables: tuple[str, ...]
    kinds: tuple[str, ...]
    unadjusted: np.ndarray
    adjusted: dict[str, np.ndarray]
    threshold: float

    def flagged(self) -> list[tuple[str, str]]:
        """(variable, column) pairs whose |SMD| exceeds the threshold."""
        out = []
        columns = {"unadjusted": self.unadjusted, **self.adjusted}
        for label, vals in columns.items():
            for name, v in zip(self.variables, vals):
                if np.isfinite(v) and abs(v) > self.threshold:
                    out.append((name, label))
        return out


def _variable_kind(values: np.ndarray) -> str:
    return "binary" if np.all(np.isin(values, (0.0, 1.0))) else "continuous"


def balance_table(
    data: SpatialDataset,
    ps: PropensityFit,
    threshold: float = 0.2,
    method: str = "weighted",
    extra: dict[str, np.ndarray] | None = None,
) -> BalanceTable:
    """Covariate balance before and after ATT weighting.

    Treated units keep weight 1 and controls get ``e/(1-e)``. ``extra``
    adds named value columns (a recovered confounder, a known truth) as
    additional rows.

    Raises
    ------
    DegenerateDataError
        Naming any variable with zero pooled spread.
    """
    if threshold <= 0:
        raise ParameterError(f"threshold must be positive, got {threshold}")
    weights = att_weights(data.a, ps.scores)
    names: list[str] = list(data.covariate_names)
    columns = [data.z[:, j] for j in range(data.z.shape[1])]
    for name, values in (extra or {}).items():
        names.append(str(name))
        columns.append(np.asarray(values, dtype=float).ravel())

    unadj = np.empty(len(names))
    adj = np.empty(len(names))
    for i, (name, values) in enumerate(zip(names, columns)):
        try:
            unadj[i] = smd(values, data.a)
            adj[i] = smd(values, data.a, weights=weights)
        except DegenerateDataError as exc:
            raise DegenerateDataError(f"covariate {name!r}: {exc}") from exc
    kinds = tuple(_variable_kind(v) for v in columns)
    return BalanceTable(
        variables=tuple(names),
        kinds=kinds,
        unadjusted=unadj,
        adjusted={method: adj},
        threshold=threshold,
    )


# ---------------------------------------------------------------------------
# method pipelines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RecoverUFit:
    """Everything produced by the full recovery pipeline on one dataset."""

    outcome: OutcomeFit
    recovered: RecoveredConfounder
    propensity: PropensityFit
    mu0: np.ndarray
    att: AttResult

    @property
    def alpha_hat(self) -> float | None:
        """Propensity coefficient on the recovered confounder, if present."""
        if "u_hat" in self.propensity.coef_names:
            return self.propensity.coef_for("u_hat")
        return None


def fit_recoveru(
    data: SpatialDataset,
    outcome_fit: OutcomeFit | None = None,
    intercept: bool = False,
    max_iter: int = 20,
    tol: float = 1e-3,
) -> RecoverUFit:
    """Run the full recovery pipeline and form the doubly robust ATT.

    Steps: spatial outcome fit (reused if supplied), residual smoothing
    to recover the latent confounder, logistic propensity on the measured
    covariates plus the recovered field, control mean
    ``Z gamma_hat + u_hat``, and the doubly robust combination.

    A recovered field with (numerically) zero spread is dropped from the
    propensity design, so the estimator degrades gracefully to its
    measured-covariates form when no spatial signal was found.
    """
    _require_treated(data)
    if data.n_control == 0:
        raise DegenerateDataError("no control units; nothing to reweight")
    if outcome_fit is None:
        outcome_fit = irwls_covariance_fit(
            data, max_iter=max_iter, tol=tol, intercept=intercept
        )
    recovered = recover_u(outcome_fit, data.coords)
    u = recovered.u_hat
    if float(np.std(u)) < 1e-12:
        design, names = propensity_design(data)
    else:
        design, names = propensity_design(data, extra=u)
    ps = logistic_fit(design, data.a, coef_names=names)
    mu0 = outcome_fit.predict_control(data) + u
    att = att_dr(data, ps, mu0, method="recoveru")
    return RecoverUFit(
        outcome=outcome_fit,
        recovered=recovered,
        propensity=ps,
        mu0=mu0,
        att=att,
    )


@dataclass(frozen=True)
class GoldFit:
    """Benchmark fit that treats the true confounder as observed."""

    coef: np.ndarray
    coef_names: tuple[str, ...]
    sigma_e2: float
    propensity: PropensityFit
    mu0: np.ndarray
    att: AttResult


def fit_gold(data: SpatialDataset, true_u) -> GoldFit:
    """Doubly robust ATT with the true confounder in both models."""
    _require_treated(data)
    true_u = np.asarray(true_u, dtype=float).ravel()
    if true_u.shape[0] != data.n:
        raise ParameterError(f"true_u length {true_u.shape[0]} for {data.n} rows")
    augmented = SpatialDataset(
        coords=data.coords,
        y=data.y,
        a=data.a,
        z=np.column_stack([data.z, true_u]),
        covariate_names=(*data.covariate_names, "u_true"),
    )
    ols = gls_fit(augmented, cov=None)
    dof = max(data.n - len(ols.coef), 1)
    sigma_e2 = float(np.sum(ols.residuals**2) / dof)
    design, names = propensity_design(data, extra=true_u)
    names = names[:-1] + ("u_true",)
    ps = logistic_fit(design, data.a, coef_names=names)
    mu0 = augmented.z @ ols.coef[1:]
    att = att_dr(data, ps, mu0, method="gold")
    return GoldFit(
        coef=ols.coef,
        coef_names=ols.coef_names,
        sigma_e2=sigma_e2,
        propensity=ps,
        mu0=mu0,
        att=att,
    )


def estimate_att(
    data: SpatialDataset,
    method: str,
    true_u=None,
    outcome_fit: OutcomeFit | None = None,
    bootstrap=None,
    bootstrap_mode: str = "full",
    true_u_params=None,
    intercept: bool = False,
) -> AttResult:
    """Estimate the ATT by the named method.

    Parameters
    ----------
    data : SpatialDataset
    method : {"naive", "gls", "gold", "recoveru"}
    true_u : ndarray, optional
        Required by ``gold``.
    outcome_fit : OutcomeFit, optional
        Reuse an existing spatial fit for ``gls``/``recoveru``.
    bootstrap : BootstrapSpec, optional
        When given, ``recoveru`` and ``gold`` intervals come from the
        parametric bootstrap (``naive`` uses its sandwich error and
        ``gls`` its coefficient covariance either way).
    bootstrap_mode : {"full", "fast"}, optional
        Refit covariance parameters inside each replicate, or freeze them.
    true_u_params : geo.MaternParams, optional
        Field parameters for the ``gold`` bootstrap.
    intercept : bool, optional
        Carry a constant column in outcome designs.
    """
    if method not in METHODS:
        raise ValidationError(
            f"unknown method {method!r}; choose from {', '.join(METHODS)}"
        )
    _require_treated(data)

    if method == "naive":
        design, names = propensity_design(data)
        ps = logistic_fit(design, data.a, coef_names=names)
        result = att_iptw(data, ps, normalize=True)
        return replace(result, method="naive")

    if method == "gls":
        fit = outcome_fit or irwls_covariance_fit(data, intercept=intercept)
        return AttResult.from_se(
            "gls", fit.beta_hat, fit.beta_se, data.n_treated, data.n_control
        )

    if method == "gold":
        if true_u is None:
            raise MissingInputError(
                "the gold benchmark needs the true confounder (true_u)"
            )
        fit = fit_gold(data, true_u)
        if bootstrap is None:
            return fit.att
        from .bootstrap import gold_bootstrap

        if true_u_params is None:
            raise MissingInputError(
                "gold bootstrap needs the confounder field parameters "
                "(true_u_params)"
            )
        boot = gold_bootstrap(data, fit, true_u_params, bootstrap)
        return AttResult.from_se(
            "gold", fit.att.estimate, boot.se, data.n_treated, data.n_control
        )

    # recoveru
    pipeline = fit_recoveru(
        data, outcome_fit=outcome_fit, intercept=intercept
    )
    if bootstrap is None:
        return pipeline.att
    from .bootstrap import parametric_bootstrap

    boot = parametric_bootstrap(
        data,
        pipeline.outcome,
        pipeline.propensity,
        bootstrap,
        refit_covariance=(bootstrap_mode == "full"),
        intercept=intercept,
    )
    return AttResult.from_se(
        "recoveru", pipeline.att.estimate, boot.se,
        data.n_treated, data.n_control,
    )
