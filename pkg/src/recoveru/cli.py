"""Command line entry points.

Four subcommands share one pipeline: ``simulate`` runs scenario grids
through the simulation harness, ``analyze`` runs the estimators on a CSV
file, ``balance`` emits only the covariate balance table, and
``recover`` writes the recovered latent field back out as a CSV column.

Exit codes: 0 success, 1 validation error, 2 numerical or convergence
error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

from .config import ANALYSIS_METHODS, AnalysisConfig, load_config
from .errors import (
    NumericalError,
    RecoveruError,
    ReportError,
    ValidationError,
)
from .estimators import (
    METHODS,
    AttResult,
    att_iptw,
    balance_table,
    fit_recoveru,
    logistic_fit,
    propensity_design,
)
from .ingest import export_csv, ingest_csv
from .recovery import recover_u
from .reports import (
    emit_report,
    merge_balance,
    render_aligned,
    write_att_table,
    write_balance_table,
    write_manifest,
)
from .simulate import (
    C_GRID,
    NU_GRID,
    REGIMES,
    Scenario,
    grid_scenarios,
    run_scenario,
)
from .spatial import SpatialDataset, irwls_covariance_fit

logger = logging.getLogger(__name__)

#: Regime flag values: the three model regimes, each with a spatial
#: covariates variant.
REGIME_CHOICES = tuple(REGIMES) + tuple(f"{r}+spatial" for r in REGIMES)


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors follow the exit code contract."""

    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _split_methods(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def build_parser() -> _Parser:
    parser = _Parser(
        prog="recoveru",
        description="Causal effect estimation under unmeasured spatial "
                    "confounding: simulation harness and CSV analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser(
        "simulate", help="run simulation scenarios and emit metric tables"
    )
    sim.add_argument("--c", type=float, default=1.5,
                     help="confounding strength (grid values: 1.5, 0.75, 0.3)")
    sim.add_argument("--nu", type=float, default=1.5,
                     help="field smoothness (grid values: 0.1, 0.5, 0.75, 1.5)")
    sim.add_argument("--regime", default="correct", metavar="REGIME",
                     help="one of: " + ", ".join(REGIME_CHOICES))
    sim.add_argument("--full", action="store_true",
                     help="run the full 3 x 4 grid for the regime "
                          "(ignores --c/--nu)")
    sim.add_argument("--reps", type=int, default=500,
                     help="replicates per scenario")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--bootstrap", type=int, default=0,
                     help="bootstrap replicates per fit (0 disables intervals)")
    sim.add_argument("--methods", type=_split_methods, default=METHODS,
                     metavar="LIST",
                     help="comma separated subset of: " + ", ".join(METHODS))
    sim.add_argument("--out", default=".", help="output directory")
    sim.add_argument("--jobs", type=int, default=1,
                     help="worker processes for replicates")
    sim.set_defaults(handler=cmd_simulate)

    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", required=True,
                        help="key=value config file (see config module)")
    shared.add_argument("--input", help="override the config's input path")
    shared.add_argument("--methods", type=_split_methods, default=None,
                        metavar="LIST",
                        help="comma separated subset of: "
                             + ", ".join(ANALYSIS_METHODS))
    shared.add_argument("--threshold", type=float, default=None,
                        help="balance flagging threshold")
    shared.add_argument("--seed", type=int, default=None)
    shared.add_argument("--bootstrap", type=int, default=None,
                        help="bootstrap replicates (0 disables intervals)")
    shared.add_argument("--out", default=None, help="output directory")
    shared.add_argument("--jobs", type=int, default=None,
                        help="worker processes for the bootstrap")

    ana = sub.add_parser("analyze", parents=[shared],
                         help="estimate the ATT from a CSV file")
    ana.set_defaults(handler=cmd_analyze)
    bal = sub.add_parser("balance", parents=[shared],
                         help="emit only the covariate balance table")
    bal.set_defaults(handler=cmd_balance)
    rec = sub.add_parser("recover", parents=[shared],
                         help="write the recovered spatial confounder as a "
                              "CSV column")
    rec.set_defaults(handler=cmd_recover)
    return parser


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _parse_regime(raw: str) -> tuple[str, bool]:
    if raw not in REGIME_CHOICES:
        raise ValidationError(
            f"unknown regime {raw!r}; allowed: {', '.join(REGIME_CHOICES)}"
        )
    base, _, suffix = raw.partition("+")
    return base, suffix == "spatial"


def cmd_simulate(args) -> None:
    regime, spatial = _parse_regime(args.regime)
    if args.full:
        scenarios = grid_scenarios(
            regime=regime,
            spatial_covariates=spatial,
            replicates=args.reps,
            seed=args.seed,
            methods=args.methods,
            bootstrap_replicates=args.bootstrap,
        )
    else:
        if args.c not in C_GRID:
            raise ValidationError(
                f"--c {args.c:g} is not a grid value; allowed: "
                + ", ".join(f"{c:g}" for c in C_GRID)
            )
        if args.nu not in NU_GRID:
            raise ValidationError(
                f"--nu {args.nu:g} is not a grid value; allowed: "
                + ", ".join(f"{v:g}" for v in NU_GRID)
            )
        scenarios = [
            Scenario(
                c=args.c,
                nu=args.nu,
                regime=regime,
                spatial_covariates=spatial,
                replicates=args.reps,
                seed=args.seed,
                methods=args.methods,
                bootstrap_replicates=args.bootstrap,
            )
        ]
    started = time.monotonic()
    metrics = []
    for sc in scenarios:
        logger.info("running scenario %s", sc.label)
        metrics.append(run_scenario(sc, n_jobs=args.jobs))
    paths = emit_report(
        metrics,
        args.out,
        manifest_extra={
            "command": "simulate",
            "seed": args.seed,
            "jobs": args.jobs,
            "wall_time_s": round(time.monotonic() - started, 3),
        },
    )
    print(f"{len(metrics)} scenario(s) -> {paths['csv']}")
    print(Path(paths["txt"]).read_text(encoding="utf-8"), end="")


# ---------------------------------------------------------------------------
# analyze / balance / recover
# ---------------------------------------------------------------------------

def _load_cli_config(args) -> AnalysisConfig:
    overrides = {
        "input": args.input,
        "methods": args.methods,
        "threshold": args.threshold,
        "seed": args.seed,
        "bootstrap": args.bootstrap,
        "out": args.out,
        "jobs": args.jobs,
    }
    return load_config(args.config, overrides)


def _ingest(cfg: AnalysisConfig) -> SpatialDataset:
    return ingest_csv(
        cfg.input,
        cfg.x,
        cfg.y,
        cfg.treatment,
        cfg.outcome,
        cfg.covariates,
        jitter_duplicates=cfg.jitter_duplicates,
        seed=cfg.seed,
    )


def _analysis_results(cfg: AnalysisConfig, data: SpatialDataset,
                      with_att: bool = True):
    """Run the configured methods; returns results, tables, failures.

    A failing method is recorded and skipped so the survivors still get
    reported; the caller decides whether to re-raise.
    """
    att_rows: list[AttResult] = []
    balance_tables = []
    failures: dict[str, str] = {}
    errors: list[RecoveruError] = []

    outcome_fit = None
    need_spatial = [m for m in cfg.methods if m in ("gls", "recoveru")]
    if need_spatial:
        try:
            outcome_fit = irwls_covariance_fit(data, intercept=cfg.intercept)
        except RecoveruError as exc:
            for m in need_spatial:
                failures[m] = f"{type(exc).__name__}: {exc}"
            errors.append(exc)

    for method in cfg.methods:
        if method in failures:
            continue
        try:
            if method == "naive":
                design, names = propensity_design(data)
                ps = logistic_fit(design, data.a, coef_names=names)
                att_rows.append(
                    replace(att_iptw(data, ps, normalize=True),
                            method="naive")
                )
                balance_tables.append(
                    balance_table(data, ps, threshold=cfg.threshold,
                                  method="naive")
                )
            elif method == "gls":
                att_rows.append(
                    AttResult.from_se(
                        "gls", outcome_fit.beta_hat, outcome_fit.beta_se,
                        data.n_treated, data.n_control,
                    )
                )
            else:
                pipe = fit_recoveru(data, outcome_fit=outcome_fit,
                                    intercept=cfg.intercept)
                result = pipe.att
                if with_att and cfg.bootstrap:
                    from .bootstrap import BootstrapSpec, parametric_bootstrap

                    boot = parametric_bootstrap(
                        data,
                        pipe.outcome,
                        pipe.propensity,
                        BootstrapSpec(
                            replicates=cfg.bootstrap,
                            seed=cfg.seed,
                            workers=cfg.jobs,
                        ),
                        refit_covariance=(cfg.bootstrap_mode == "full"),
                        intercept=cfg.intercept,
                    )
                    result = AttResult.from_se(
                        "recoveru", result.estimate, boot.se,
                        data.n_treated, data.n_control,
                    )
                att_rows.append(result)
                balance_tables.append(
                    balance_table(data, pipe.propensity,
                                  threshold=cfg.threshold, method="recoveru")
                )
        except RecoveruError as exc:
            failures[method] = f"{type(exc).__name__}: {exc}"
            errors.append(exc)
    return att_rows, balance_tables, failures, errors


def _finish_analysis(cfg, paths: dict, failures: dict, errors: list,
                     started: float, command: str,
                     extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config": asdict(cfg),
        "failures": failures,
        "wall_time_s": round(time.monotonic() - started, 3),
    }
    if extra:
        manifest.update(extra)
    manifest_path = write_manifest(Path(cfg.out) / "manifest.json", manifest)
    paths["manifest"] = manifest_path
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    if errors:
        # Partial results are on disk; surface the first failure.
        raise errors[0]


def cmd_analyze(args) -> None:
    cfg = _load_cli_config(args)
    started = time.monotonic()
    data = _ingest(cfg)
    att_rows, balance_tables, failures, errors = _analysis_results(cfg, data)
    paths: dict = {}
    if att_rows:
        paths.update(
            {f"att_{k}": p
             for k, p in write_att_table(att_rows, cfg.out).items()}
        )
        print(render_aligned(
            ("method", "estimate", "se", "ci_lower", "ci_upper"),
            [[r.method, r.estimate, r.se, r.ci_lower, r.ci_upper]
             for r in att_rows],
        ), end="")
    if balance_tables:
        merged = merge_balance(balance_tables)
        paths.update(
            {f"balance_{k}": p
             for k, p in write_balance_table(merged, cfg.out).items()}
        )
        flagged = merged.flagged()
        if flagged:
            print("above the balance threshold: "
                  + ", ".join(f"{var} ({col})"
                              for var, col in sorted(flagged)))
    _finish_analysis(cfg, paths, failures, errors, started, "analyze")


def cmd_balance(args) -> None:
    cfg = _load_cli_config(args)
    started = time.monotonic()
    data = _ingest(cfg)
    _, balance_tables, failures, errors = _analysis_results(
        cfg, data, with_att=False
    )
    if not balance_tables and not errors:
        raise ValidationError(
            "no propensity-based method among the configured methods; "
            "balance needs naive or recoveru"
        )
    paths: dict = {}
    if balance_tables:
        merged = merge_balance(balance_tables)
        paths.update(write_balance_table(merged, cfg.out))
        print(Path(paths["txt"]).read_text(encoding="utf-8"), end="")
    _finish_analysis(cfg, paths, failures, errors, started, "balance")


def cmd_recover(args) -> None:
    cfg = _load_cli_config(args)
    started = time.monotonic()
    data = _ingest(cfg)
    fit = irwls_covariance_fit(data, intercept=cfg.intercept)
    recovered = recover_u(fit, data.coords)
    out_path = Path(cfg.out) / "recovered.csv"
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    export_csv(
        data,
        out_path,
        x=cfg.x,
        y=cfg.y,
        treatment=cfg.treatment,
        outcome=cfg.outcome,
        extra={"u_hat": recovered.u_hat},
    )
    paths = {"csv": out_path}
    print(f"recovered field -> {out_path}")
    extra = {
        "covariance": {
            "sigma2": fit.matern.sigma2,
            "theta": fit.matern.theta,
            "nu": fit.matern.nu,
            "nugget": fit.matern.nugget,
            "converged": fit.converged,
            "n_iter": fit.n_iter,
        },
        "smoother_trace": recovered.smoother_trace,
    }
    _finish_analysis(cfg, paths, {}, [], started, "recover", extra=extra)


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.handler(args)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except (ReportError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
