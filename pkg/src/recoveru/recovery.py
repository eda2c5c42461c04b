"""Partial recovery of an unmeasured spatial confounder.

Given an outcome fit with Matérn residual covariance, the smooth spatial
component of the residuals is extracted by the conditional-expectation
smoother ``S = Sigma (Sigma + sigma_e^2 I)^{-1}``, where ``Sigma`` is the
fitted spatial covariance and ``sigma_e^2`` the fitted nugget. Applied to
the residuals ``r = y - A beta_hat - Z gamma_hat`` this yields the best
linear predictor of the latent field given the residuals, a shrunken,
spatially coherent estimate of the part of the confounder that the
residuals retain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.spatial.distance import pdist

from . import geo
from .errors import ParameterError
from .spatial import OutcomeFit, SpatialDataset, _cov_from_condensed

#: Relative floor substituted when the fitted nugget is exactly zero, so
#: the smoother solve stays well posed.
NUGGET_FLOOR = 1e-6


@dataclass(frozen=True)
class RecoveredConfounder:
    """Recovered spatial confounder values and smoother diagnostics.

    Attributes
    ----------
    u_hat : ndarray
        Recovered field, one value per observation.
    smoother_trace : float
        Trace of the smoother matrix; the effective degrees of freedom
        absorbed by the recovery.
    nugget_used : float
        Noise variance actually used in the solve (the fitted nugget, or
        its floor when that was exactly zero).
    source : OutcomeFit
        The fit whose residuals were smoothed; ``u_hat`` is an exact
        linear map of ``source.residuals``.
    """

    u_hat: np.ndarray
    smoother_trace: float
    nugget_used: float
    source: OutcomeFit


def recovery_smoother(
    coords, params: geo.MaternParams
) -> tuple[np.ndarray, float, float]:
    """Dense smoother matrix ``Sigma (Sigma + sigma_e^2 I)^{-1}``.

    Returns ``(S, trace, nugget_used)``. Exposed separately so bootstrap
    replicates with frozen covariance parameters can reuse one matrix.
    """
    pts = geo.as_coords(coords)
    n = pts.shape[0]
    if params.sigma2 == 0.0:
        # No spatial signal: the smoother is identically zero.
        return np.zeros((n, n)), 0.0, params.nugget
    nugget = params.nugget
    if nugget == 0.0:
        nugget = NUGGET_FLOOR * params.sigma2
    sigma = _cov_from_condensed(pdist(pts), n, params, include_nugget=False)
    total = sigma.copy()
    total[np.diag_indices_from(total)] += nugget
    factor, _ = geo.cholesky_factor(total, jitter=geo.DEFAULT_JITTER * params.sigma2)
    # S = Sigma (Sigma + nugget I)^{-1}; solve against Sigma columns and
    # transpose (the product is not symmetric in general floating point,
    # but S^T = (Sigma + nugget I)^{-1} Sigma has the same trace).
    smoother = cho_solve((factor, True), sigma, check_finite=False).T
    # trace(S) = n - nugget * trace((Sigma + nugget I)^{-1}); the inverse
    # trace is the squared Frobenius norm of the inverse Cholesky factor.
    inv_factor = solve_triangular(
        factor, np.eye(n), lower=True, check_finite=False
    )
    trace = n - nugget * float(np.sum(inv_factor * inv_factor))
    return smoother, trace, nugget


def recover_u(fit: OutcomeFit, coords) -> RecoveredConfounder:
    """Recover the smooth spatial component of the outcome residuals.

    Computes ``u_hat = Sigma_hat (Sigma_hat + sigma_e_hat^2 I)^{-1} r``
    using the covariance parameters and residuals stored on ``fit``. With
    a zero fitted nugget the smoother approaches the identity, so a small
    relative floor (:data:`NUGGET_FLOOR` times the sill) keeps the system
    well conditioned; ``u_hat`` then equals the residuals up to that
    floor.

    Parameters
    ----------
    fit : OutcomeFit
    coords : array_like, shape (n, 2)
        The coordinates the fit was produced on.

    Returns
    -------
    RecoveredConfounder
    """
    pts = geo.as_coords(coords)
    if pts.shape[0] != fit.residuals.shape[0]:
        raise ParameterError(
            f"{pts.shape[0]} coordinates for {fit.residuals.shape[0]} residuals"
        )
    smoother, trace, nugget = recovery_smoother(pts, fit.matern)
    u_hat = smoother @ fit.residuals
    return RecoveredConfounder(
        u_hat=u_hat, smoother_trace=trace, nugget_used=nugget, source=fit
    )
