"""Desk-scale acceptance checks for the whole toolkit.

One test per headline claim: kernel correctness, recovery quality, bias
and variance orderings, interval coverage, confounder balance,
misspecification robustness, estimator definitions, command line
determinism, and the end-to-end analysis pipeline. The Monte Carlo
checks read the shared session fixtures, all keyed to one seed.
"""

import json
import math

import numpy as np
import pytest

from recoveru import geo
from recoveru.cli import main
from recoveru.estimators import PropensityFit, att_dr, att_iptw
from recoveru.ingest import export_csv
from recoveru.reports import read_att_table, read_balance_table
from recoveru.simulate import case_study_dataset
from recoveru.spatial import SpatialDataset, gls_fit

from conftest import SEED, covered_fraction


def test_exponential_kernel_matches_closed_form():
    # nu = 1/2 has the closed form sigma2 * exp(-sqrt(2) h / theta).
    sigma2, theta = 1.7, 2.3
    params = geo.MaternParams(sigma2=sigma2, theta=theta, nu=0.5)
    ratios = np.linspace(0.01, 10.0, 100)
    computed = geo.matern_cov(ratios * theta, params)
    expected = sigma2 * np.exp(-math.sqrt(2.0) * ratios)
    rel = np.abs(computed - expected) / expected
    assert rel.max() < 1e-10


def test_recovered_field_tracks_truth_and_improves_with_smoothness(
    metrics_nu15, metrics_nu01
):
    smooth = float(metrics_nu15.detail["corr_u"][:50].mean())
    rough = float(metrics_nu01.detail["corr_u"].mean())
    assert smooth >= 0.85, f"mean corr {smooth:.4f}"
    assert smooth > rough, f"smooth {smooth:.4f} vs rough {rough:.4f}"


def test_recovery_pipeline_beats_naive_on_bias_and_variance(
    metrics_nu15, metrics_nu05
):
    for metrics in (metrics_nu05, metrics_nu15):
        ours = metrics.per_method["recoveru"]
        naive = metrics.per_method["naive"]
        label = metrics.scenario.label
        assert abs(ours.bias) < abs(naive.bias), label
        assert ours.sd < naive.sd, label
    gold_gap = abs(metrics_nu15.per_method["gold"].bias) + 0.10
    assert abs(metrics_nu15.per_method["recoveru"].bias) <= gold_gap


def test_bootstrap_interval_coverage_is_near_nominal(coverage_run):
    coverage = covered_fraction(coverage_run.detail, "recoveru")
    assert 88.0 <= coverage <= 99.0, f"measured coverage {coverage:.1f}%"


def test_weighting_restores_balance_on_the_latent_confounder(
    metrics_nu05, metrics_nu075, metrics_nu15
):
    # Over the first 50 replicates of each smooth-field scenario the
    # recovery weights must bring |SMD(U)| under 0.2 at least 80% of
    # the time, and must always improve on the naive weights on average.
    report = []
    for metrics in (metrics_nu05, metrics_nu075, metrics_nu15):
        ours = metrics.detail["recoveru_smd_u"][:50]
        naive = metrics.detail["naive_smd_u"][:50]
        frac = float((ours <= 0.2).mean())
        report.append(f"{metrics.scenario.label}: {frac:.2f}")
        assert ours.mean() < naive.mean(), metrics.scenario.label
    fracs = [float(line.split(": ")[1]) for line in report]
    assert all(f >= 0.8 for f in fracs), "; ".join(report)


def test_recovery_pipeline_is_most_robust_to_misspecification(
    metrics_misspec_outcome, metrics_misspec_both, metrics_misspec_spatial
):
    for metrics in (metrics_misspec_outcome, metrics_misspec_both):
        ours = abs(metrics.per_method["recoveru"].bias)
        label = metrics.scenario.label
        assert ours < abs(metrics.per_method["naive"].bias), label
        assert ours < abs(metrics.per_method["gls"].bias), label
    spatial = metrics_misspec_spatial
    assert abs(spatial.per_method["recoveru"].bias) < abs(
        spatial.per_method["naive"].bias
    )


def test_att_estimators_match_brute_force_definitions():
    rng = np.random.default_rng(SEED)

    def brute_iptw(a, y, e):
        n = len(a)
        treated = sum(a[i] * y[i] for i in range(n))
        weighted = sum(
            (e[i] / (1.0 - e[i])) * (1 - a[i]) * y[i] for i in range(n)
        )
        return treated / n - weighted / n

    def brute_iptw_normalized(a, y, e):
        n = len(a)
        top1 = sum(a[i] * y[i] for i in range(n))
        bot1 = sum(a[i] for i in range(n))
        top0 = sum(
            (e[i] / (1.0 - e[i])) * (1 - a[i]) * y[i] for i in range(n)
        )
        bot0 = sum((e[i] / (1.0 - e[i])) * (1 - a[i]) for i in range(n))
        return top1 / bot1 - top0 / bot0

    def brute_dr(a, y, e, mu0):
        n = len(a)
        total = sum(
            (a[i] - (1 - a[i]) * e[i]) * (y[i] - mu0[i]) for i in range(n)
        )
        return total / sum(a[i] for i in range(n))

    for _ in range(1000):
        n = int(rng.integers(2, 21))
        a = np.zeros(n, dtype=int)
        a[rng.permutation(n)[: int(rng.integers(1, n))]] = 1
        y = rng.normal(0.0, 3.0, n)
        e = rng.uniform(0.05, 0.95, n)
        mu0 = rng.normal(0.0, 2.0, n)
        data = SpatialDataset(
            coords=rng.uniform(0.0, 10.0, size=(n, 2)),
            y=y,
            a=a,
            z=rng.standard_normal((n, 1)),
            covariate_names=("z1",),
        )
        ps = PropensityFit(
            coef=np.zeros(1),
            coef_names=("(intercept)",),
            scores=e,
            converged=True,
            n_iter=1,
            design=np.ones((n, 1)),
        )
        assert att_iptw(data, ps).estimate == pytest.approx(
            brute_iptw(a, y, e), abs=1e-10
        )
        assert att_iptw(data, ps, normalize=True).estimate == pytest.approx(
            brute_iptw_normalized(a, y, e), abs=1e-10
        )
        assert att_dr(data, ps, mu0).estimate == pytest.approx(
            brute_dr(a, y, e, mu0), abs=1e-10
        )

    for _ in range(100):
        n = int(rng.integers(10, 41))
        p = int(rng.integers(1, 5))
        a = np.zeros(n, dtype=int)
        a[rng.permutation(n)[: int(rng.integers(1, n))]] = 1
        data = SpatialDataset(
            coords=rng.uniform(0.0, 10.0, size=(n, 2)),
            y=rng.normal(0.0, 2.0, n),
            a=a,
            z=rng.standard_normal((n, p)),
            covariate_names=tuple(f"z{j + 1}" for j in range(p)),
        )
        x = np.column_stack([a.astype(float), data.z])
        ols_coef = np.linalg.lstsq(x, data.y, rcond=None)[0]
        np.testing.assert_allclose(gls_fit(data).coef, ols_coef, atol=1e-8)


def test_simulate_cli_is_deterministic_across_worker_counts(tmp_path, capsys):
    base = [
        "simulate", "--c", "1.5", "--nu", "1.5", "--reps", "20",
        "--seed", "7",
    ]
    for jobs, name in (("1", "serial"), ("8", "pooled")):
        out = tmp_path / name
        assert main(base + ["--jobs", jobs, "--out", str(out)]) == 0
    capsys.readouterr()
    for table in ("metrics.csv", "metrics.txt"):
        serial = (tmp_path / "serial" / table).read_bytes()
        pooled = (tmp_path / "pooled" / table).read_bytes()
        assert serial == pooled, table


def test_analysis_pipeline_completes_on_a_study_sized_csv(tmp_path, capsys):
    data, _ = case_study_dataset()
    csv_path = tmp_path / "study.csv"
    export_csv(data, csv_path)
    cfg_path = tmp_path / "study.cfg"
    cfg_path.write_text(
        f"input      = {csv_path}\n"
        "covariates = " + ", ".join(data.covariate_names) + "\n"
        "threshold  = 0.15\n",
        encoding="utf-8",
    )
    out = tmp_path / "out"
    code = main(["analyze", "--config", str(cfg_path), "--out", str(out)])
    capsys.readouterr()
    assert code == 0
    results = read_att_table(out / "att.csv")
    assert [r.method for r in results] == ["naive", "gls", "recoveru"]
    assert all(np.isfinite(r.estimate) for r in results)
    assert all(
        r.se is not None and r.ci_lower < r.estimate < r.ci_upper
        for r in results
        if r.method in ("naive", "gls")
    )
    balance = read_balance_table(out / "balance.csv")
    assert balance.variables == data.covariate_names
    assert balance.threshold == 0.15
    assert set(balance.adjusted) == {"naive", "recoveru"}
    assert {balance.kinds[i] for i in (3, 4, 5, 6)} == {"binary"}
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["failures"] == {}
