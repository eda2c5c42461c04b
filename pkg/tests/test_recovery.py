"""Partial recovery of the latent field from spatial residuals."""

import numpy as np
import pytest
from scipy.spatial.distance import pdist, squareform

from recoveru import geo
from recoveru.recovery import NUGGET_FLOOR, recover_u, recovery_smoother
from recoveru.simulate import Scenario, generate_dataset
from recoveru.spatial import OutcomeFit, irwls_covariance_fit

from conftest import SEED


def fit_with(residuals, coords, params):
    """A minimal OutcomeFit carrying given residuals and parameters."""
    n = len(residuals)
    return OutcomeFit(
        coef=np.zeros(2),
        coef_cov=np.eye(2),
        coef_names=("a", "z1"),
        matern=params,
        residuals=np.asarray(residuals, dtype=float),
        converged=True,
        n_iter=1,
        intercept=False,
    )


@pytest.fixture()
def grid_coords():
    rng = np.random.default_rng(SEED)
    return rng.uniform(0, 10, (50, 2))


class TestSmoother:
    def test_matches_direct_inverse(self, grid_coords):
        params = geo.MaternParams(1.0, 3.0, 1.5, nugget=0.2)
        smoother, trace, nugget = recovery_smoother(grid_coords, params)
        sigma = geo.cov_matrix(grid_coords, params, include_nugget=False)
        direct = sigma @ np.linalg.inv(sigma + 0.2 * np.eye(50))
        np.testing.assert_allclose(smoother, direct, atol=1e-8)
        assert trace == pytest.approx(np.trace(direct), rel=1e-8)
        assert nugget == 0.2

    def test_zero_sill_gives_zero_smoother(self, grid_coords):
        params = geo.MaternParams(0.0, 3.0, 1.5, nugget=0.3)
        smoother, trace, _ = recovery_smoother(grid_coords, params)
        np.testing.assert_array_equal(smoother, 0.0)
        assert trace == 0.0

    def test_nugget_floor_when_zero(self, grid_coords):
        params = geo.MaternParams(2.0, 3.0, 1.5, nugget=0.0)
        _, _, nugget = recovery_smoother(grid_coords, params)
        assert nugget == pytest.approx(NUGGET_FLOOR * 2.0)

    def test_singular_values_below_one(self, grid_coords):
        params = geo.MaternParams(1.0, 3.0, 0.5, nugget=0.1)
        smoother, _, _ = recovery_smoother(grid_coords, params)
        s = np.linalg.svd(smoother, compute_uv=False)
        assert s.max() < 1.0


class TestRecoverU:
    def test_diagonal_case_is_scalar_shrinkage(self):
        # Far-apart points make Sigma effectively diagonal, so recovery
        # shrinks each residual by sigma2 / (sigma2 + nugget).
        coords = np.array([[0.0, 0.0], [500.0, 0.0], [0.0, 500.0], [500.0, 500.0]])
        params = geo.MaternParams(sigma2=3.0, theta=0.5, nu=0.5, nugget=1.0)
        residuals = np.array([4.0, -2.0, 0.0, 8.0])
        rec = recover_u(fit_with(residuals, coords, params), coords)
        np.testing.assert_allclose(rec.u_hat, 0.75 * residuals, atol=1e-8)

    def test_near_interpolation_with_floored_nugget(self, grid_coords):
        params = geo.MaternParams(1.0, 3.0, 1.5, nugget=0.0)
        residuals = geo.sample_grf(grid_coords, params, seed=SEED)
        rec = recover_u(fit_with(residuals, grid_coords, params), grid_coords)
        assert rec.nugget_used == pytest.approx(NUGGET_FLOOR)
        np.testing.assert_allclose(rec.u_hat, residuals, atol=1e-3)

    def test_linearity(self, grid_coords):
        params = geo.MaternParams(1.0, 3.0, 1.5, nugget=0.2)
        rng = np.random.default_rng(SEED)
        r1 = rng.standard_normal(50)
        r2 = rng.standard_normal(50)
        u1 = recover_u(fit_with(r1, grid_coords, params), grid_coords).u_hat
        u2 = recover_u(fit_with(r2, grid_coords, params), grid_coords).u_hat
        both = recover_u(fit_with(r1 + r2, grid_coords, params), grid_coords)
        np.testing.assert_allclose(both.u_hat, u1 + u2, atol=1e-10)

    def test_shrinkage_norm(self, grid_coords):
        params = geo.MaternParams(1.0, 3.0, 0.5, nugget=0.3)
        rng = np.random.default_rng(SEED)
        for _ in range(10):
            r = rng.standard_normal(50)
            rec = recover_u(fit_with(r, grid_coords, params), grid_coords)
            assert np.linalg.norm(rec.u_hat) <= np.linalg.norm(r)

    def test_smoother_trace_identity(self, grid_coords):
        params = geo.MaternParams(1.0, 3.0, 1.5, nugget=0.2)
        r = np.random.default_rng(SEED).standard_normal(50)
        rec = recover_u(fit_with(r, grid_coords, params), grid_coords)
        smoother, trace, _ = recovery_smoother(grid_coords, params)
        np.testing.assert_allclose(rec.u_hat, smoother @ r, atol=1e-8)
        assert rec.smoother_trace == pytest.approx(trace, rel=1e-8)

    def test_source_fit_is_kept(self):
        data, _ = generate_dataset(Scenario(replicates=1, seed=SEED), 0)
        fit = irwls_covariance_fit(data)
        rec = recover_u(fit, data.coords)
        assert rec.source is fit
        smoother, _, _ = recovery_smoother(data.coords, fit.matern)
        np.testing.assert_allclose(
            rec.u_hat, smoother @ rec.source.residuals, atol=1e-8
        )

    def test_high_correlation_on_smooth_field(self, metrics_nu15):
        corr = metrics_nu15.detail["corr_u"][:50]
        assert np.mean(corr) >= 0.9

    def test_correlation_increases_with_smoothness(
        self, metrics_nu15, metrics_nu01
    ):
        smooth = np.mean(metrics_nu15.detail["corr_u"][:50])
        rough = np.mean(metrics_nu01.detail["corr_u"][:50])
        assert smooth > rough
