"""Command line subcommands, exit codes, and output files."""

import json

import numpy as np
import pytest

from recoveru.cli import main
from recoveru.ingest import export_csv, ingest_csv
from recoveru.reports import read_att_table, read_balance_table
from recoveru.simulate import Scenario, generate_dataset

from conftest import SEED


@pytest.fixture(scope="module")
def analysis_files(tmp_path_factory):
    """A small exported dataset and a config file pointing at it."""
    root = tmp_path_factory.mktemp("analysis")
    data, _ = generate_dataset(Scenario(n=80, nu=0.5, c=1.5, seed=SEED), 0)
    csv_path = root / "data.csv"
    export_csv(data, csv_path)
    cfg_path = root / "run.cfg"
    cfg_path.write_text(
        f"input      = {csv_path}\n"
        "covariates = z1, z2, z3, z4\n"
        "threshold  = 0.2\n"
        "bootstrap_mode = fast\n"
        f"out        = {root / 'default_out'}\n",
        encoding="utf-8",
    )
    return csv_path, cfg_path


def simulate_args(out, reps=2, extra=()):
    return [
        "simulate", "--c", "1.5", "--nu", "0.5", "--reps", str(reps),
        "--seed", str(SEED), "--methods", "naive", "--out", str(out), *extra,
    ]


class TestSimulateCommand:
    def test_single_cell_writes_tables(self, tmp_path, capsys):
        code = main(simulate_args(tmp_path))
        out = capsys.readouterr().out
        assert code == 0
        assert (tmp_path / "metrics.csv").exists()
        assert (tmp_path / "metrics.txt").exists()
        assert (tmp_path / "manifest.json").exists()
        assert "1 scenario(s)" in out
        assert "naive_bias" in out

    def test_reruns_and_workers_are_byte_identical(self, tmp_path, capsys):
        for name, extra in (
            ("a", ()), ("b", ()), ("c", ("--jobs", "2")),
        ):
            assert main(simulate_args(tmp_path / name, extra=extra)) == 0
        capsys.readouterr()
        first_csv = (tmp_path / "a" / "metrics.csv").read_bytes()
        first_txt = (tmp_path / "a" / "metrics.txt").read_bytes()
        assert (tmp_path / "b" / "metrics.csv").read_bytes() == first_csv
        assert (tmp_path / "c" / "metrics.csv").read_bytes() == first_csv
        assert (tmp_path / "b" / "metrics.txt").read_bytes() == first_txt

    def test_off_grid_c_is_rejected_with_the_grid(self, tmp_path, capsys):
        code = main(["simulate", "--c", "0.9", "--out", str(tmp_path)])
        err = capsys.readouterr().err
        assert code == 1
        assert "--c 0.9 is not a grid value" in err
        assert "1.5, 0.75, 0.3" in err

    def test_off_grid_nu_is_rejected_with_the_grid(self, tmp_path, capsys):
        code = main(["simulate", "--nu", "0.2", "--out", str(tmp_path)])
        err = capsys.readouterr().err
        assert code == 1
        assert "--nu 0.2 is not a grid value" in err
        assert "0.1, 0.5, 0.75, 1.5" in err

    def test_unknown_regime_lists_choices(self, tmp_path, capsys):
        code = main(
            ["simulate", "--regime", "sideways", "--out", str(tmp_path)]
        )
        err = capsys.readouterr().err
        assert code == 1
        assert "sideways" in err
        assert "misspec-both+spatial" in err

    def test_unknown_method(self, tmp_path, capsys):
        code = main(
            simulate_args(tmp_path, extra=["--methods", "naive,magic"])
        )
        assert code == 1
        assert "unknown methods" in capsys.readouterr().err

    def test_full_grid_emits_twelve_rows(self, tmp_path, capsys):
        code = main(
            ["simulate", "--full", "--reps", "1", "--seed", str(SEED),
             "--methods", "naive", "--out", str(tmp_path), "--jobs", "1"]
        )
        capsys.readouterr()
        assert code == 0
        rows = (tmp_path / "metrics.csv").read_text(encoding="utf-8")
        assert len(rows.splitlines()) == 13
        manifest = json.loads(
            (tmp_path / "manifest.json").read_text(encoding="utf-8")
        )
        assert len(manifest["scenarios"]) == 12


class TestAnalyzeCommand:
    def test_end_to_end(self, analysis_files, tmp_path, capsys):
        _, cfg = analysis_files
        code = main(
            ["analyze", "--config", str(cfg), "--out", str(tmp_path)]
        )
        out = capsys.readouterr().out
        assert code == 0
        results = read_att_table(tmp_path / "att.csv")
        assert [r.method for r in results] == ["naive", "gls", "recoveru"]
        assert all(np.isfinite(r.estimate) for r in results)
        balance = read_balance_table(tmp_path / "balance.csv")
        assert balance.variables == ("z1", "z2", "z3", "z4")
        assert set(balance.adjusted) == {"naive", "recoveru"}
        manifest = json.loads(
            (tmp_path / "manifest.json").read_text(encoding="utf-8")
        )
        assert manifest["command"] == "analyze"
        assert manifest["failures"] == {}
        assert "att_csv:" in out
        assert "balance_txt:" in out

    def test_bootstrap_interval_lands_in_the_table(self, analysis_files,
                                                   tmp_path, capsys):
        _, cfg = analysis_files
        code = main(
            ["analyze", "--config", str(cfg), "--out", str(tmp_path),
             "--methods", "recoveru", "--bootstrap", "24"]
        )
        capsys.readouterr()
        assert code == 0
        (result,) = read_att_table(tmp_path / "att.csv")
        assert result.method == "recoveru"
        assert result.se is not None and result.se > 0
        assert result.ci_lower < result.estimate < result.ci_upper

    def test_balance_subcommand(self, analysis_files, tmp_path, capsys):
        _, cfg = analysis_files
        code = main(
            ["balance", "--config", str(cfg), "--out", str(tmp_path)]
        )
        out = capsys.readouterr().out
        assert code == 0
        assert not (tmp_path / "att.csv").exists()
        assert (tmp_path / "balance.csv").exists()
        assert "variable" in out
        assert "smd_recoveru" in out

    def test_balance_needs_a_propensity_method(self, analysis_files,
                                               tmp_path, capsys):
        _, cfg = analysis_files
        code = main(
            ["balance", "--config", str(cfg), "--out", str(tmp_path),
             "--methods", "gls"]
        )
        assert code == 1
        assert "needs naive or recoveru" in capsys.readouterr().err

    def test_recover_subcommand(self, analysis_files, tmp_path, capsys):
        csv_path, cfg = analysis_files
        code = main(
            ["recover", "--config", str(cfg), "--out", str(tmp_path)]
        )
        capsys.readouterr()
        assert code == 0
        back = ingest_csv(
            tmp_path / "recovered.csv", x="x", y="y", treatment="treatment",
            outcome="outcome", covariates=("z1", "z2", "z3", "z4", "u_hat"),
        )
        original = ingest_csv(
            csv_path, x="x", y="y", treatment="treatment",
            outcome="outcome", covariates=("z1", "z2", "z3", "z4"),
        )
        np.testing.assert_array_equal(back.y, original.y)
        u_hat = back.z[:, 4]
        assert np.std(u_hat) > 0
        manifest = json.loads(
            (tmp_path / "manifest.json").read_text(encoding="utf-8")
        )
        assert manifest["covariance"]["sigma2"] >= 0
        assert manifest["smoother_trace"] >= 0

    def test_missing_config_flag(self, capsys):
        code = main(["analyze"])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_input_file(self, analysis_files, tmp_path, capsys):
        _, cfg = analysis_files
        code = main(
            ["analyze", "--config", str(cfg), "--out", str(tmp_path),
             "--input", str(tmp_path / "absent.csv")]
        )
        assert code == 1
        assert "not found" in capsys.readouterr().err

    def test_gold_is_refused_on_real_data(self, analysis_files, tmp_path,
                                          capsys):
        _, cfg = analysis_files
        code = main(
            ["analyze", "--config", str(cfg), "--out", str(tmp_path),
             "--methods", "gold"]
        )
        assert code == 1
        assert "simulation-only" in capsys.readouterr().err

    def test_singular_design_exits_numerical(self, analysis_files,
                                             tmp_path, capsys):
        csv_path, _ = analysis_files
        original = ingest_csv(
            csv_path, x="x", y="y", treatment="treatment",
            outcome="outcome", covariates=("z1", "z2", "z3", "z4"),
        )
        doubled = tmp_path / "doubled.csv"
        export_csv(original, doubled, extra={"z1_copy": original.z[:, 0]})
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            f"input = {doubled}\n"
            "covariates = z1, z2, z3, z4, z1_copy\n"
            "methods = gls\n"
            f"out = {tmp_path}\n",
            encoding="utf-8",
        )
        code = main(["analyze", "--config", str(cfg)])
        err = capsys.readouterr().err
        assert code == 2
        assert "numerical error" in err

    def test_unwritable_out_exits_io(self, analysis_files, tmp_path, capsys):
        _, cfg = analysis_files
        blocker = tmp_path / "file"
        blocker.write_text("", encoding="utf-8")
        code = main(
            ["analyze", "--config", str(cfg), "--out", str(blocker / "sub"),
             "--methods", "naive"]
        )
        assert code == 3
        assert "i/o error" in capsys.readouterr().err
