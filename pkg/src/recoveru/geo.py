"""Matérn random fields on irregular point sets.

Core contents:
    - :class:`MaternParams`: covariance parameters with validation.
    - :func:`matern_cov`: isotropic Matérn covariance function.
    - :func:`cov_matrix`: dense covariance matrix over coordinates.
    - :func:`cholesky_factor`: factorization with a jitter retry.
    - :func:`sample_grf`: seeded Gaussian random field draws.
    - :class:`PairBinning` / :func:`empirical_semivariogram`: binned
      semivariance estimates for residual diagnostics and fitting.

The Matérn kernel here uses the argument scaling ``2 * sqrt(nu) * h / theta``.
Many libraries use ``sqrt(2 * nu) * h / theta`` instead; the two conventions
differ by a factor of ``sqrt(2)`` in the effective range, so fitted ``theta``
values are not interchangeable across conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky as _scipy_cholesky
from scipy.linalg import LinAlgError
from scipy.spatial.distance import pdist, squareform
from scipy.special import gammaln as _gammaln
from scipy.special import kv as _bessel_kv

from .errors import BinningError, ParameterError, SingularMatrixError

#: Smoothness values above this are clamped; the kernel is numerically
#: indistinguishable from its squared-exponential limit well before 50.
NU_CAP = 50.0

#: Relative diagonal jitter used when a Cholesky factorization fails.
DEFAULT_JITTER = 1e-8


@dataclass(frozen=True, slots=True)
class MaternParams:
    """Parameters of a Matérn covariance with optional nugget.

    Parameters
    ----------
    sigma2 : float
        Partial sill (marginal variance of the smooth field), >= 0.
    theta : float
        Range parameter, > 0.
    nu : float
        Smoothness, > 0. Values above :data:`NU_CAP` are clamped.
    nugget : float, optional
        Micro-scale/noise variance added on the matrix diagonal only.
    """

    sigma2: float
    theta: float
    nu: float
    nugget: float = 0.0

    def __post_init__(self) -> None:
        for name in ("sigma2", "theta", "nu", "nugget"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ParameterError(f"{name} must be finite, got {value!r}")
        if self.sigma2 < 0:
            raise ParameterError(f"sigma2 must be >= 0, got {self.sigma2}")
        if self.theta <= 0:
            raise ParameterError(f"theta must be > 0, got {self.theta}")
        if self.nu <= 0:
            raise ParameterError(f"nu must be > 0, got {self.nu}")
        if self.nugget < 0:
            raise ParameterError(f"nugget must be >= 0, got {self.nugget}")
        if self.nu > NU_CAP:
            object.__setattr__(self, "nu", NU_CAP)


def as_coords(coords) -> np.ndarray:
    """Validate and return coordinates as a float array of shape (n, 2)."""
    arr = np.asarray(coords, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ParameterError(
            f"coordinates must have shape (n, 2), got {arr.shape}"
        )
    if arr.shape[0] == 0:
        raise ParameterError("coordinate set is empty")
    if not np.all(np.isfinite(arr)):
        raise ParameterError("coordinates contain non-finite values")
    return arr


def _matern_correlation(arg, nu):
    """Matérn correlation ``2^(1-nu)/Gamma(nu) * arg^nu * K_nu(arg)``.

    Broadcasts over both arguments, so fitting code can evaluate whole
    parameter populations at once. Handles the limits directly: exact
    zeros map to 1, Bessel overflow at tiny arguments maps to 1, power
    overflow at enormous arguments maps to 0.
    """
    arg = np.atleast_1d(np.asarray(arg, dtype=float))
    nu = np.asarray(nu, dtype=float)
    coef = np.exp((1.0 - nu) * math.log(2.0) - _gammaln(nu))
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        corr = coef * np.power(arg, nu) * _bessel_kv(nu, arg)
        bad = ~np.isfinite(corr)
        if np.any(bad):
            arg_b = np.broadcast_to(arg, corr.shape)
            corr[bad & (arg_b < 1.0)] = 1.0
            corr[bad & (arg_b >= 1.0)] = 0.0
        corr[np.broadcast_to(arg, corr.shape) == 0.0] = 1.0
    return corr


def matern_cov(h, params: MaternParams) -> np.ndarray | float:
    """Evaluate the Matérn covariance at lag distances ``h``.

    Uses ``C(h) = sigma2 * 2^(1-nu)/Gamma(nu) * a^nu * K_nu(a)`` with
    ``a = 2*sqrt(nu)*h/theta`` and the modified Bessel function of the
    second kind. The nugget is *not* included: it lives on the matrix
    diagonal only (see :func:`cov_matrix`).

    Parameters
    ----------
    h : array_like
        Nonnegative distances; scalars and arrays both work.
    params : MaternParams

    Returns
    -------
    Covariance values with the same shape as ``h`` (scalar in, scalar out).
    """
    h_arr = np.asarray(h, dtype=float)
    scalar_in = h_arr.ndim == 0
    h_arr = np.atleast_1d(h_arr).astype(float)
    if np.any(h_arr < 0):
        raise ParameterError("distances must be nonnegative")

    arg = (2.0 * math.sqrt(params.nu) / params.theta) * h_arr
    values = params.sigma2 * _matern_correlation(arg, params.nu)
    if scalar_in:
        return float(values[0])
    return values


def cov_matrix(
    coords, params: MaternParams, include_nugget: bool = True
) -> np.ndarray:
    """Dense Matérn covariance matrix over a coordinate set.

    The diagonal is ``sigma2 + nugget`` when ``include_nugget`` is set,
    else ``sigma2``; off-diagonal entries never include the nugget.

    Raises
    ------
    SingularMatrixError
        If two coordinates coincide while the effective nugget is zero,
        which makes the matrix exactly singular.
    """
    pts = as_coords(coords)
    dists = pdist(pts)
    effective_nugget = params.nugget if include_nugget else 0.0
    if effective_nugget == 0.0 and dists.size and np.any(dists == 0.0):
        raise SingularMatrixError(
            "duplicate coordinates with zero nugget produce a singular "
            "covariance matrix; add a nugget or perturb the points"
        )
    mat = squareform(matern_cov(dists, params))
    np.fill_diagonal(mat, params.sigma2 + effective_nugget)
    return mat


def cholesky_factor(
    matrix: np.ndarray, jitter: float | None = None
) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor with a single jitter retry.

    Parameters
    ----------
    matrix : ndarray
        Symmetric matrix expected to be positive definite up to roundoff.
    jitter : float, optional
        Absolute diagonal bump used on retry. Defaults to
        ``DEFAULT_JITTER * mean(diag(matrix))``.

    Returns
    -------
    (L, jitter_used)
        ``L`` is lower triangular with ``L @ L.T`` equal to the (possibly
        jittered) input; ``jitter_used`` is 0.0 when no retry was needed.

    Raises
    ------
    SingularMatrixError
        If the factorization still fails after the retry. The message
        suggests a larger jitter.
    """
    try:
        return _scipy_cholesky(matrix, lower=True, check_finite=False), 0.0
    except LinAlgError:
        pass
    if jitter is None:
        jitter = DEFAULT_JITTER * float(np.mean(np.diag(matrix)))
    bumped = matrix.copy()
    bumped[np.diag_indices_from(bumped)] += jitter
    try:
        return _scipy_cholesky(bumped, lower=True, check_finite=False), jitter
    except LinAlgError as exc:
        raise SingularMatrixError(
            f"Cholesky factorization failed even with diagonal jitter "
            f"{jitter:.3e}; the matrix is numerically singular. Try a "
            f"larger jitter or a nonzero nugget."
        ) from exc


def sample_grf(
    coords,
    params: MaternParams,
    seed: int | np.random.Generator,
    size: int | None = None,
    include_nugget: bool = False,
) -> np.ndarray:
    """Draw a mean-zero Gaussian random field at the given coordinates.

    Parameters
    ----------
    coords : array_like, shape (n, 2)
    params : MaternParams
    seed : int or numpy Generator
        Draws are reproducible for a fixed integer seed.
    size : int, optional
        When given, return ``size`` independent replicates as an array of
        shape ``(size, n)``; otherwise a single field of shape ``(n,)``.
    include_nugget : bool, optional
        Add the nugget to the sampling covariance diagonal. Off by
        default: the nugget usually models non-spatial noise that callers
        add separately.
    """
    pts = as_coords(coords)
    sigma = cov_matrix(pts, params, include_nugget=include_nugget)
    factor, _ = cholesky_factor(sigma, jitter=DEFAULT_JITTER * params.sigma2)
    rng = np.random.default_rng(seed)
    if size is None:
        return factor @ rng.standard_normal(pts.shape[0])
    draws = rng.standard_normal((size, pts.shape[0]))
    return draws @ factor.T


@dataclass(frozen=True, slots=True)
class Semivariogram:
    """Binned empirical semivariogram.

    ``lag`` holds bin midpoints, ``gamma`` the mean of ``(v_i - v_j)^2 / 2``
    per bin, and ``count`` the number of pairs per bin. Empty bins are
    dropped.
    """

    lag: np.ndarray
    gamma: np.ndarray
    count: np.ndarray


class PairBinning:
    """Distance binning for repeated semivariogram evaluation.

    Precomputes pairwise distances and their bin assignment for a fixed
    point set, so that the semivariogram of changing values (e.g.
    regression residuals across fitting iterations) costs one pass over
    the pairs.

    Parameters
    ----------
    coords : array_like, shape (n, 2)
    bins : int or array_like, optional
        Number of equal-width bins (default 15) or explicit bin edges.
    max_lag : float, optional
        Upper distance cutoff for equal-width bins; defaults to half the
        maximum pairwise distance. Ignored when explicit edges are given.
    """

    def __init__(self, coords, bins: int | np.ndarray = 15,
                 max_lag: float | None = None) -> None:
        pts = as_coords(coords)
        if pts.shape[0] < 2:
            raise BinningError("need at least two points to form pairs")
        dists = pdist(pts)
        if np.isscalar(bins) or np.ndim(bins) == 0:
            n_bins = int(bins)
            if n_bins < 1:
                raise ParameterError(f"bins must be >= 1, got {bins}")
            if max_lag is None:
                max_lag = float(dists.max()) / 2.0
                if not np.any(dists <= max_lag):
                    # Tiny point sets can have every pair beyond half the
                    # maximum distance; widen the defaulted cutoff rather
                    # than discard all pairs.
                    max_lag = float(dists.max())
            if max_lag <= 0:
                raise BinningError(
                    "maximum pairwise distance is zero; the point set has "
                    "no usable spatial spread"
                )
            edges = np.linspace(0.0, max_lag, n_bins + 1)
        else:
            edges = np.asarray(bins, dtype=float)
            if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
                raise ParameterError("bin edges must be increasing, length >= 2")
            n_bins = edges.size - 1

        idx = np.searchsorted(edges, dists, side="right") - 1
        # Pairs at exactly the upper edge belong to the last bin.
        idx[dists == edges[-1]] = n_bins - 1
        keep = (idx >= 0) & (idx < n_bins)

        self.edges = edges
        self.n_bins = n_bins
        self._pair_idx = idx[keep]
        self._keep = keep
        self._dists = dists
        counts = np.bincount(self._pair_idx, minlength=n_bins)
        self._counts_all = counts
        self._nonempty = counts > 0
        if int(self._nonempty.sum()) < min(3, n_bins):
            raise BinningError(
                f"only {int(self._nonempty.sum())} of {n_bins} distance "
                f"bins are nonempty; the pair distances have too little "
                f"spread to bin"
            )
        mids = 0.5 * (edges[:-1] + edges[1:])
        self.lag = mids[self._nonempty]
        self.count = counts[self._nonempty]

    def semivariogram(self, values) -> Semivariogram:
        """Semivariogram of ``values`` under the precomputed binning."""
        v = np.asarray(values, dtype=float).ravel()
        sq = pdist(v[:, None], metric="sqeuclidean")[self._keep]
        sums = np.bincount(
            self._pair_idx, weights=sq, minlength=self.n_bins
        )
        gamma = 0.5 * sums[self._nonempty] / self.count
        return Semivariogram(lag=self.lag.copy(), gamma=gamma,
                             count=self.count.copy())


def empirical_semivariogram(
    coords, values, bins: int | np.ndarray = 15, max_lag: float | None = None
) -> Semivariogram:
    """Binned empirical semivariogram of a field observed at points.

    Computes ``gamma(h) = mean of (v_i - v_j)^2 / 2`` over pairs whose
    distance falls in each bin. See :class:`PairBinning` for the binning
    rules; pairs beyond ``max_lag`` are excluded.

    Raises
    ------
    BinningError
        If fewer than ``min(3, n_bins)`` bins are nonempty, or the point
        set has no spatial spread.
    """
    pts = as_coords(coords)
    v = np.asarray(values, dtype=float).ravel()
    if v.shape[0] != pts.shape[0]:
        raise ParameterError(
            f"values length {v.shape[0]} does not match {pts.shape[0]} points"
        )
    return PairBinning(pts, bins=bins, max_lag=max_lag).semivariogram(v)
