"""CSV ingestion and export for spatial analysis datasets.

The expected shape is one row per location with named columns for the
two coordinates, a binary treatment, the outcome, and any number of
covariates (UTF-8, comma separated, ``.`` decimal, header required).
Problems are reported per row, where row 1 is the first data row after
the header.

Floats are written with ``repr`` so that exporting and re-ingesting a
dataset reproduces it bit-exactly.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .errors import DegenerateDataError, ReportError, ValidationError
from .spatial import SpatialDataset

logger = logging.getLogger(__name__)

#: Cap on per-row diagnostics included in an error message.
MAX_DIAGNOSTICS = 5


def _format_diagnostics(problems: list[str]) -> str:
    shown = problems[:MAX_DIAGNOSTICS]
    rest = len(problems) - len(shown)
    tail = f"\n  ... and {rest} more" if rest > 0 else ""
    return "\n  ".join(shown) + tail


def _parse_cell(row_idx: int, column: str, raw: str | None,
                problems: list[str]) -> float:
    if raw is None or not raw.strip():
        problems.append(f"row {row_idx}: missing value in column {column!r}")
        return np.nan
    try:
        return float(raw)
    except ValueError:
        problems.append(
            f"row {row_idx}: cannot parse {raw!r} in column {column!r}"
        )
        return np.nan


def _jitter_duplicates(coords: np.ndarray, amount: float,
                       seed: int) -> np.ndarray:
    """Perturb repeated coordinates, leaving each first occurrence alone."""
    _, first = np.unique(coords, axis=0, return_index=True)
    dup_mask = np.ones(len(coords), dtype=bool)
    dup_mask[first] = False
    if not dup_mask.any():
        return coords
    if amount <= 0.0:
        logger.warning(
            "%d rows share coordinates with an earlier row; spatial "
            "covariance fitting may be unstable (a jitter option is "
            "available)", int(dup_mask.sum()),
        )
        return coords
    logger.warning(
        "%d duplicated coordinate rows jittered by up to %g",
        int(dup_mask.sum()), amount,
    )
    rng = np.random.default_rng(seed)
    out = coords.copy()
    out[dup_mask] += rng.uniform(-amount, amount, size=(int(dup_mask.sum()), 2))
    return out


def ingest_csv(
    path,
    x: str,
    y: str,
    treatment: str,
    outcome: str,
    covariates,
    jitter_duplicates: float = 0.0,
    seed: int = 0,
) -> SpatialDataset:
    """Read a CSV file into a validated :class:`SpatialDataset`.

    Parameters
    ----------
    path : path-like
    x, y, treatment, outcome : str
        Column names for the coordinates, the binary treatment, and the
        outcome.
    covariates : sequence of str
        Covariate column names, at least one.
    jitter_duplicates : float, optional
        When positive, rows that repeat an earlier coordinate pair are
        perturbed uniformly by up to this amount (duplicates otherwise
        only produce a warning).
    seed : int, optional
        Seed for the jitter draw.

    Raises
    ------
    ValidationError
        Missing columns, unparseable or missing values, or non-binary
        treatment values, with row-indexed diagnostics.
    """
    covariates = tuple(covariates)
    if not covariates:
        raise ValidationError("at least one covariate column is required")
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"input file not found: {path}")

    needed = [x, y, treatment, outcome, *covariates]
    if len(set(needed)) != len(needed):
        raise ValidationError(f"column mapping repeats a column: {needed}")

    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        missing = [c for c in needed if c not in header]
        if missing:
            raise ValidationError(
                f"{path} lacks required columns: {', '.join(missing)} "
                f"(found: {', '.join(header)})"
            )
        rows = list(reader)
    if not rows:
        raise DegenerateDataError(f"{path} has a header but no data rows")

    problems: list[str] = []
    coords = np.empty((len(rows), 2))
    a = np.empty(len(rows))
    yv = np.empty(len(rows))
    z = np.empty((len(rows), len(covariates)))
    for i, row in enumerate(rows):
        idx = i + 1
        coords[i, 0] = _parse_cell(idx, x, row.get(x), problems)
        coords[i, 1] = _parse_cell(idx, y, row.get(y), problems)
        a[i] = _parse_cell(idx, treatment, row.get(treatment), problems)
        yv[i] = _parse_cell(idx, outcome, row.get(outcome), problems)
        for j, name in enumerate(covariates):
            z[i, j] = _parse_cell(idx, name, row.get(name), problems)
        if np.isfinite(a[i]) and a[i] not in (0.0, 1.0):
            problems.append(
                f"row {idx}: treatment value {row[treatment]} "
                f"in column {treatment!r} (must be 0 or 1)"
            )
    if problems:
        raise ValidationError(
            f"{path}: {len(problems)} problem(s):\n  "
            + _format_diagnostics(problems)
        )

    coords = _jitter_duplicates(coords, jitter_duplicates, seed)
    return SpatialDataset(
        coords=coords,
        y=yv,
        a=a.astype(int),
        z=z,
        covariate_names=covariates,
    )


def export_csv(
    data: SpatialDataset,
    path,
    x: str = "x",
    y: str = "y",
    treatment: str = "treatment",
    outcome: str = "outcome",
    extra: dict[str, np.ndarray] | None = None,
) -> None:
    """Write a dataset to CSV, optionally with extra named columns."""
    extra = extra or {}
    for name, values in extra.items():
        if len(values) != data.n:
            raise ValidationError(
                f"extra column {name!r} has {len(values)} values "
                f"for {data.n} rows"
            )
    header = [x, y, treatment, outcome, *data.covariate_names, *extra]
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for i in range(data.n):
                row = [
                    repr(float(data.coords[i, 0])),
                    repr(float(data.coords[i, 1])),
                    str(int(data.a[i])),
                    repr(float(data.y[i])),
                    *(repr(float(v)) for v in data.z[i]),
                    *(repr(float(extra[name][i])) for name in extra),
                ]
                writer.writerow(row)
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc
