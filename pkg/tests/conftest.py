"""Shared fixtures: seeded Monte Carlo runs reused across test modules.

The expensive scenario runs are session-scoped so each is computed once;
tests then read the per-replicate detail arrays. Every run is keyed by
the single module-level SEED, so the whole suite is one fixed draw.
"""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from recoveru.simulate import Scenario, run_scenario

SEED = 11

settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


def _run(**kwargs):
    kwargs.setdefault("c", 1.5)
    kwargs.setdefault("seed", SEED)
    return run_scenario(Scenario(**kwargs))


@pytest.fixture(scope="session")
def metrics_nu15():
    """Correct regime, strong confounding, smooth field; all methods."""
    return _run(nu=1.5, replicates=100)


@pytest.fixture(scope="session")
def metrics_nu05():
    return _run(nu=0.5, replicates=100)


@pytest.fixture(scope="session")
def metrics_nu075():
    return _run(nu=0.75, replicates=50, methods=("naive", "recoveru"))


@pytest.fixture(scope="session")
def metrics_nu01():
    return _run(nu=0.1, replicates=50)


@pytest.fixture(scope="session")
def metrics_c03():
    return _run(c=0.3, nu=1.5, replicates=100)


@pytest.fixture(scope="session")
def metrics_misspec_outcome():
    return _run(nu=1.5, replicates=100, regime="misspec-outcome")


@pytest.fixture(scope="session")
def metrics_misspec_both():
    return _run(nu=1.5, replicates=100, regime="misspec-both")


@pytest.fixture(scope="session")
def metrics_misspec_spatial():
    return _run(
        nu=1.5, replicates=100, regime="misspec-outcome",
        spatial_covariates=True,
    )


@pytest.fixture(scope="session")
def coverage_run():
    """Recovery pipeline with bootstrap intervals on every replicate."""
    return _run(
        nu=1.5, replicates=100, methods=("recoveru",),
        bootstrap_replicates=200, bootstrap_mode="fast",
    )


@pytest.fixture(scope="session")
def gold_coverage_nu15():
    return _run(
        nu=1.5, replicates=100, methods=("gold",), bootstrap_replicates=200
    )


@pytest.fixture(scope="session")
def gold_coverage_nu05():
    return _run(
        nu=0.5, replicates=100, methods=("gold",), bootstrap_replicates=200
    )


def covered_fraction(detail: dict, method: str, truth: float = 1.0) -> float:
    """Percent of replicates whose CI contains the truth."""
    lo = np.asarray(detail[f"{method}_ci_lower"])
    hi = np.asarray(detail[f"{method}_ci_upper"])
    ok = np.isfinite(lo) & np.isfinite(hi)
    return float(np.mean((lo[ok] <= truth) & (truth <= hi[ok])) * 100)
