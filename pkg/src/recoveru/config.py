"""Analysis configuration: a flat key=value file plus flag overrides.

The format is deliberately small: one ``key = value`` pair per line,
``#`` comments, and blank lines. Lists are comma separated. Every
malformed field produces an error naming the key, so a bad config never
surfaces as a stack trace from deeper in the pipeline.

Example::

    # power plant analysis
    input      = plants.csv
    x          = longitude
    y          = latitude
    treatment  = scr_installed
    outcome    = ozone_4max
    covariates = pop_density, median_income, pct_urban
    methods    = naive, gls, recoveru
    threshold  = 0.15
    bootstrap  = 500
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ParameterError, ValidationError

#: Methods available on real data (the gold benchmark needs the true
#: confounder, so it exists only inside the simulation harness).
ANALYSIS_METHODS = ("naive", "gls", "recoveru")


@dataclass(frozen=True)
class AnalysisConfig:
    """Everything needed to run an analysis on one CSV file."""

    input: str
    covariates: tuple[str, ...]
    x: str = "x"
    y: str = "y"
    treatment: str = "treatment"
    outcome: str = "outcome"
    methods: tuple[str, ...] = ANALYSIS_METHODS
    threshold: float = 0.2
    seed: int = 0
    bootstrap: int = 0
    bootstrap_mode: str = "full"
    jobs: int = 1
    out: str = "."
    intercept: bool = True
    jitter_duplicates: float = 0.0

    def __post_init__(self) -> None:
        if not self.input:
            raise ParameterError("config key 'input': a file path is required")
        for key in ("x", "y", "treatment", "outcome"):
            if not getattr(self, key):
                raise ParameterError(f"config key {key!r}: a column name is required")
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if not self.covariates:
            raise ParameterError(
                "config key 'covariates': at least one column is required"
            )
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.methods:
            raise ParameterError(
                "config key 'methods': at least one method is required"
            )
        unknown = [m for m in self.methods if m not in ANALYSIS_METHODS]
        if unknown:
            raise ParameterError(
                f"config key 'methods': unknown {unknown}; choose from "
                f"{', '.join(ANALYSIS_METHODS)} (the gold benchmark is "
                "simulation-only)"
            )
        if not (math.isfinite(self.threshold) and self.threshold > 0.0):
            raise ParameterError(
                f"config key 'threshold': must be positive, got {self.threshold}"
            )
        if self.seed < 0:
            raise ParameterError(
                f"config key 'seed': must be nonnegative, got {self.seed}"
            )
        if self.bootstrap != 0 and self.bootstrap < 2:
            raise ParameterError(
                "config key 'bootstrap': must be 0 (disabled) or at least 2, "
                f"got {self.bootstrap}"
            )
        if self.bootstrap_mode not in ("fast", "full"):
            raise ParameterError(
                "config key 'bootstrap_mode': must be 'fast' or 'full', "
                f"got {self.bootstrap_mode!r}"
            )
        if self.jobs < 1:
            raise ParameterError(
                f"config key 'jobs': must be >= 1, got {self.jobs}"
            )
        if not (math.isfinite(self.jitter_duplicates)
                and self.jitter_duplicates >= 0.0):
            raise ParameterError(
                "config key 'jitter_duplicates': must be >= 0, "
                f"got {self.jitter_duplicates}"
            )


def _parse_bool(key: str, raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ParameterError(f"config key {key!r}: expected true/false, got {raw!r}")


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw.strip())
    except ValueError:
        raise ParameterError(
            f"config key {key!r}: expected an integer, got {raw!r}"
        ) from None


def _parse_float(key: str, raw: str) -> float:
    try:
        return float(raw.strip())
    except ValueError:
        raise ParameterError(
            f"config key {key!r}: expected a number, got {raw!r}"
        ) from None


def _parse_list(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


_PARSERS = {
    "input": lambda k, v: v.strip(),
    "x": lambda k, v: v.strip(),
    "y": lambda k, v: v.strip(),
    "treatment": lambda k, v: v.strip(),
    "outcome": lambda k, v: v.strip(),
    "out": lambda k, v: v.strip(),
    "covariates": lambda k, v: _parse_list(v),
    "methods": lambda k, v: _parse_list(v),
    "threshold": _parse_float,
    "jitter_duplicates": _parse_float,
    "seed": _parse_int,
    "bootstrap": _parse_int,
    "jobs": _parse_int,
    "bootstrap_mode": lambda k, v: v.strip(),
    "intercept": _parse_bool,
}

assert set(_PARSERS) == {f.name for f in fields(AnalysisConfig)}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse key=value lines into typed values, without validation."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValidationError(
                f"{source}:{lineno}: expected 'key = value', got {line!r}"
            )
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _PARSERS:
            raise ValidationError(
                f"{source}:{lineno}: unknown config key {key!r} "
                f"(known: {', '.join(sorted(_PARSERS))})"
            )
        if key in values:
            raise ValidationError(
                f"{source}:{lineno}: config key {key!r} given twice"
            )
        values[key] = _PARSERS[key](key, raw)
    return values


def load_config(path, overrides: dict | None = None) -> AnalysisConfig:
    """Read a config file and apply overrides (typically CLI flags)."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    values = parse_config_text(path.read_text(encoding="utf-8"), source=str(path))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    missing = [k for k in ("input", "covariates") if k not in values]
    if missing:
        raise ValidationError(
            f"{path}: missing required config keys: {', '.join(missing)}"
        )
    return AnalysisConfig(**values)
