"""Report files: treatment effect tables, balance tables, scenario
metrics, and run manifests.

Every table is written twice: a machine CSV whose floats use ``repr``
(so reading it back loses nothing) and an aligned text rendering for
humans. A JSON manifest records seeds, parameters, package versions,
and failure counts alongside the tables; wall-clock timing lives only
there, keeping the tables byte-reproducible.
"""

from __future__ import annotations

import csv
import io
import json
import platform
from pathlib import Path

import numpy as np

from .errors import ParameterError, ReportError, ValidationError
from .estimators import METHODS, AttResult, BalanceTable
from .simulate import ScenarioMetrics

#: Scenario-level columns of the metrics table, before method columns.
_SCENARIO_COLUMNS = (
    "regime", "spatial_covariates", "c", "nu", "n", "replicates", "seed",
    "bootstrap_replicates", "bootstrap_mode", "n_failed",
    "corr_u_mean", "smd_u_unadj_mean",
)
_METHOD_FIELDS = ("bias", "sd", "mean_se", "coverage", "mean_abs_smd_u")
_ATT_COLUMNS = (
    "method", "estimate", "se", "ci_lower", "ci_upper",
    "n_treated", "n_control",
)


def _cell(value) -> str:
    """Lossless text for one machine-table cell."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _opt_float(raw: str) -> float | None:
    return None if raw == "" else float(raw)


def _human(value) -> str:
    """Rounded text for one human-table cell."""
    if value is None or value == "":
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.4f}"
    return str(value)


def _is_numeric_column(cells: list[str]) -> bool:
    seen = False
    for cell in cells:
        if not cell:
            continue
        try:
            float(cell)
        except ValueError:
            return False
        seen = True
    return seen


def render_aligned(headers, rows) -> str:
    """Monospace table: numbers right-aligned, labels left-aligned."""
    cells = [[_human(v) for v in row] for row in rows]
    widths = [
        max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
        for i, h in enumerate(headers)
    ]
    numeric = [
        _is_numeric_column([r[i] for r in cells]) for i in range(len(headers))
    ]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip(),
        "  ".join("-" * w for w in widths),
    ]
    for row in cells:
        padded = [
            c.rjust(w) if num else c.ljust(w)
            for c, w, num in zip(row, widths, numeric)
        ]
        lines.append("  ".join(padded).rstrip())
    return "\n".join(lines) + "\n"


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc


def _write_csv(path: Path, headers, rows) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(headers)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    _write_text(path, buffer.getvalue())


def _read_rows(path) -> tuple[list[str], list[dict]]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"table not found: {path}")
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        return list(reader.fieldnames or []), list(reader)


# ---------------------------------------------------------------------------
# treatment effect table
# ---------------------------------------------------------------------------

def write_att_table(results, out_dir, stem: str = "att") -> dict[str, Path]:
    """Write ATT estimates (method, estimate, interval) as CSV and text."""
    results = list(results)
    if not results:
        raise ParameterError("no ATT results to report")
    out_dir = Path(out_dir)
    rows = [
        [r.method, r.estimate, r.se, r.ci_lower, r.ci_upper,
         r.n_treated, r.n_control]
        for r in results
    ]
    csv_path = out_dir / f"{stem}.csv"
    txt_path = out_dir / f"{stem}.txt"
    _write_csv(csv_path, _ATT_COLUMNS, rows)
    _write_text(txt_path, render_aligned(_ATT_COLUMNS, rows))
    return {"csv": csv_path, "txt": txt_path}


def read_att_table(path) -> list[AttResult]:
    """Parse a written ATT table back into result objects."""
    headers, rows = _read_rows(path)
    missing = [c for c in _ATT_COLUMNS if c not in headers]
    if missing:
        raise ValidationError(f"{path} lacks columns: {', '.join(missing)}")
    return [
        AttResult(
            method=row["method"],
            estimate=float(row["estimate"]),
            se=_opt_float(row["se"]),
            ci_lower=_opt_float(row["ci_lower"]),
            ci_upper=_opt_float(row["ci_upper"]),
            n_treated=int(row["n_treated"]),
            n_control=int(row["n_control"]),
        )
        for row in rows
    ]


# ---------------------------------------------------------------------------
# balance table
# ---------------------------------------------------------------------------

def merge_balance(tables) -> BalanceTable:
    """Combine per-method balance tables over the same variables."""
    tables = list(tables)
    if not tables:
        raise ParameterError("no balance tables to merge")
    first = tables[0]
    adjusted: dict[str, np.ndarray] = {}
    for table in tables:
        if table.variables != first.variables:
            raise ParameterError(
                "balance tables disagree on variables; cannot merge"
            )
        if table.threshold != first.threshold:
            raise ParameterError(
                "balance tables disagree on the threshold; cannot merge"
            )
        adjusted.update(table.adjusted)
    return BalanceTable(
        variables=first.variables,
        kinds=first.kinds,
        unadjusted=first.unadjusted,
        adjusted=adjusted,
        threshold=first.threshold,
    )


def write_balance_table(table: BalanceTable, out_dir,
                        stem: str = "balance") -> dict[str, Path]:
    """Write standardized mean differences per variable and method.

    The threshold is repeated in its own column so the file alone
    reconstructs the table.
    """
    out_dir = Path(out_dir)
    methods = [m for m in METHODS if m in table.adjusted]
    methods += [m for m in table.adjusted if m not in methods]
    headers = ["variable", "kind", "unadjusted",
               *(f"smd_{m}" for m in methods), "threshold"]
    rows = [
        [
            var,
            table.kinds[i],
            table.unadjusted[i],
            *(table.adjusted[m][i] for m in methods),
            table.threshold,
        ]
        for i, var in enumerate(table.variables)
    ]
    csv_path = out_dir / f"{stem}.csv"
    txt_path = out_dir / f"{stem}.txt"
    _write_csv(csv_path, headers, rows)
    _write_text(txt_path, render_aligned(headers, rows))
    return {"csv": csv_path, "txt": txt_path}


def read_balance_table(path) -> BalanceTable:
    """Parse a written balance table back into its domain type."""
    headers, rows = _read_rows(path)
    fixed = ("variable", "kind", "unadjusted", "threshold")
    missing = [c for c in fixed if c not in headers]
    if missing:
        raise ValidationError(f"{path} lacks columns: {', '.join(missing)}")
    if not rows:
        raise ValidationError(f"{path} has no rows")
    methods = [h[len("smd_"):] for h in headers if h.startswith("smd_")]
    return BalanceTable(
        variables=tuple(row["variable"] for row in rows),
        kinds=tuple(row["kind"] for row in rows),
        unadjusted=np.array([float(row["unadjusted"]) for row in rows]),
        adjusted={
            m: np.array([float(row[f"smd_{m}"]) for row in rows])
            for m in methods
        },
        threshold=float(rows[0]["threshold"]),
    )


# ---------------------------------------------------------------------------
# scenario metrics table
# ---------------------------------------------------------------------------

def _metrics_row(metrics: ScenarioMetrics, methods) -> list:
    sc = metrics.scenario
    row = [
        sc.regime, sc.spatial_covariates, sc.c, sc.nu, sc.n, sc.replicates,
        sc.seed, sc.bootstrap_replicates, sc.bootstrap_mode,
        metrics.n_failed, metrics.corr_u_mean, metrics.smd_u_unadj_mean,
    ]
    for method in methods:
        summary = metrics.per_method.get(method)
        if summary is None:
            row.extend([None] * len(_METHOD_FIELDS))
        else:
            row.extend(getattr(summary, f) for f in _METHOD_FIELDS)
    return row


def emit_report(metrics, out_dir, stem: str = "metrics",
                manifest_extra: dict | None = None) -> dict[str, Path]:
    """Write the scenario metrics table (CSV + aligned text + manifest).

    One row per scenario; method summaries appear as ``{method}_bias``,
    ``{method}_sd``, ``{method}_mean_se``, ``{method}_coverage``, and
    ``{method}_mean_abs_smd_u`` columns for every method present in any
    scenario.
    """
    metrics = list(metrics)
    if not metrics:
        raise ParameterError("no scenario metrics to report")
    out_dir = Path(out_dir)
    present = set()
    for m in metrics:
        present.update(m.per_method)
    methods = [m for m in METHODS if m in present]
    headers = list(_SCENARIO_COLUMNS) + [
        f"{m}_{f}" for m in methods for f in _METHOD_FIELDS
    ]
    rows = [_metrics_row(m, methods) for m in metrics]
    csv_path = out_dir / f"{stem}.csv"
    txt_path = out_dir / f"{stem}.txt"
    _write_csv(csv_path, headers, rows)
    _write_text(txt_path, render_aligned(headers, rows))
    paths = {"csv": csv_path, "txt": txt_path}
    manifest = {
        "scenarios": [
            {
                "label": m.scenario.label,
                "seed": m.scenario.seed,
                "replicates": m.scenario.replicates,
                "n_failed": m.n_failed,
                "failures": list(m.failures),
            }
            for m in metrics
        ],
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    paths["manifest"] = write_manifest(out_dir / "manifest.json", manifest)
    return paths


def read_metrics_table(path) -> list[dict]:
    """Parse a written metrics table into per-scenario dicts of values."""
    headers, rows = _read_rows(path)
    missing = [c for c in _SCENARIO_COLUMNS if c not in headers]
    if missing:
        raise ValidationError(f"{path} lacks columns: {', '.join(missing)}")
    out = []
    for row in rows:
        parsed: dict = {}
        for key, raw in row.items():
            if key in ("regime", "bootstrap_mode"):
                parsed[key] = raw
            elif key == "spatial_covariates":
                parsed[key] = raw == "true"
            elif key in ("n", "replicates", "seed",
                         "bootstrap_replicates", "n_failed"):
                parsed[key] = int(raw)
            else:
                parsed[key] = _opt_float(raw)
        out.append(parsed)
    return out


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def version_stamp() -> dict:
    """Interpreter and numeric library versions for the manifest."""
    import scipy

    from . import __version__

    return {
        "package": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def write_manifest(path, payload: dict) -> Path:
    """Write a JSON sidecar describing the run."""
    path = Path(path)
    body = dict(payload)
    body.setdefault("versions", version_stamp())
    _write_text(path, json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path
