"""Report persistence and rendering.

JSON reports carry a ``schema`` tag (``FLUXR1`` for flux reports, ``CRITR1``
for criterion reports). Floats are written with Python's shortest round-trip
repr; non-finite values use the JSON extensions ``NaN`` / ``Infinity``. CSV
values use ``%.17g``.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
import re
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticError

from .errors import SchemaError, StorageError
from .flux import CriterionReport, FluxReport, SlopeFit, Verdict
from .reflect import ContinuityModulus
from .spectral import Grid

FLUX_SCHEMA = "FLUXR1"
CRITERION_SCHEMA = "CRITR1"
SUPPORTED = {"FLUXR": 1, "CRITR": 1}
CSV_COLUMNS = ("shift_or_eps", "direction_id", "value")


# ---- schema models ----

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class FitModel(_Strict):
    slope: float
    intercept: float
    lower: float
    upper: float
    residual: float
    n_points: int
    band: tuple[float, float]


class GridModel(_Strict):
    kind: Literal["periodic3", "hybrid_slab", "half_slab"]
    lengths: tuple[float, float, float]
    side: int = 1
    resolution: tuple[int, int, int]


class FluxReportModel(_Strict):
    schema_: Literal["FLUXR1"] = Field(alias="schema")
    grid: GridModel
    epsilons: list[float]
    j_direct: list[float]
    j_bilinear: list[float]
    identity_residuals: list[float]
    decay: FitModel
    extrapolated_integral: float
    energy_change: float
    energy_balance_residual: float
    mollified_balance_residuals: list[float]
    times: list[float]
    majorant: Optional[list[float]] = None
    majorant_decay: Optional[FitModel] = None


class CriterionReportModel(_Strict):
    schema_: Literal["CRITR1"] = Field(alias="schema")
    grid: GridModel
    mode: Literal["s", "besov", "half"]
    shifts: list[float]
    direction_vectors: list[tuple[float, float, float]]
    per_direction: list[list[float]]
    s3_over_y: list[float]
    fit: FitModel
    verdict: Verdict
    besov_integral: Optional[float] = None
    besov_remainder: Optional[float] = None
    extras: dict = {}


ReportModel = Union[FluxReportModel, CriterionReportModel]


# ---- conversion ----

def grid_descriptor(grid: Grid) -> dict:
    return {
        "kind": grid.kind.value,
        "lengths": [float(v) for v in grid.domain.lengths],
        "side": grid.domain.side,
        "resolution": list(grid.resolution),
    }


def _fit(fit: SlopeFit | None) -> dict | None:
    if fit is None:
        return None
    return {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "lower": fit.lower,
        "upper": fit.upper,
        "residual": fit.residual,
        "n_points": fit.n_points,
        "band": [float(fit.band[0]), float(fit.band[1])],
    }


def flux_report_dict(report: FluxReport, grid: Grid) -> dict:
    return {
        "schema": FLUX_SCHEMA,
        "grid": grid_descriptor(grid),
        "epsilons": list(report.epsilons),
        "j_direct": list(report.j_direct),
        "j_bilinear": list(report.j_bilinear),
        "identity_residuals": list(report.identity_residuals),
        "decay": _fit(report.decay),
        "extrapolated_integral": report.extrapolated_integral,
        "energy_change": report.energy_change,
        "energy_balance_residual": report.energy_balance_residual,
        "mollified_balance_residuals": list(report.mollified_balance_residuals),
        "times": list(report.times),
        "majorant": None if report.majorant is None else list(report.majorant),
        "majorant_decay": _fit(report.majorant_decay),
    }


def criterion_report_dict(report: CriterionReport, grid: Grid) -> dict:
    return {
        "schema": CRITERION_SCHEMA,
        "grid": grid_descriptor(grid),
        "mode": report.mode,
        "shifts": list(report.shifts),
        "direction_vectors": [list(d) for d in report.direction_vectors],
        "per_direction": [list(row) for row in report.per_direction],
        "s3_over_y": list(report.s3_over_y),
        "fit": _fit(report.fit),
        "verdict": report.verdict.value,
        "besov_integral": report.besov_integral,
        "besov_remainder": report.besov_remainder,
        "extras": report.extras,
    }


# ---- writing ----

def _atomic_write(path, blob: bytes) -> str:
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc
    return hashlib.sha256(blob).hexdigest()


def dumps_json(payload: dict) -> str:
    return json.dumps(payload, indent=2, allow_nan=True) + "\n"


def write_json(path, payload: dict) -> str:
    return _atomic_write(path, dumps_json(payload).encode("utf-8"))


def _g17(v: float) -> str:
    return "%.17g" % v


def csv_text(rows, columns=CSV_COLUMNS) -> str:
    out = io.StringIO()
    out.write(",".join(columns) + "\n")
    for row in rows:
        out.write(",".join(_g17(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    return out.getvalue()


def write_csv(path, rows, columns=CSV_COLUMNS) -> str:
    return _atomic_write(path, csv_text(rows, columns).encode("utf-8"))


def structfn_rows(shifts, per_direction) -> list[tuple]:
    """(shift, direction index, value) per entry; ``mean`` rows hold the direction average."""
    rows = []
    for s, vals in zip(shifts, per_direction):
        for j, v in enumerate(vals):
            rows.append((float(s), j, float(v)))
        rows.append((float(s), "mean", float(np.mean(vals))))
    return rows


def modulus_rows(mod: ContinuityModulus) -> list[tuple]:
    return [(float(r), "sup", float(w)) for r, w in zip(mod.radii, mod.w_values)]


# ---- loading and rendering ----

_SCHEMA_RE = re.compile(r"^([A-Z]+?)(\d+)$")


def _schema_tag(payload: dict, source: str) -> tuple[str, int]:
    tag = payload.get("schema") if isinstance(payload, dict) else None
    m = _SCHEMA_RE.match(tag) if isinstance(tag, str) else None
    if m is None:
        raise SchemaError(f"{source}: missing or malformed schema tag {tag!r}")
    return m.group(1), int(m.group(2))


def parse_report(payload: dict, source: str = "<report>") -> ReportModel:
    family, version = _schema_tag(payload, source)
    if family not in SUPPORTED:
        raise SchemaError(f"{source}: unknown report family {family!r}")
    if version != SUPPORTED[family]:
        raise SchemaError(
            f"{source}: schema version {family}{version} is not supported (expected {family}{SUPPORTED[family]})"
        )
    model = FluxReportModel if family == "FLUXR" else CriterionReportModel
    try:
        return model.model_validate(payload)
    except PydanticError as exc:
        raise SchemaError(f"{source}: report does not match {family}{version}: {exc}") from exc


def load_report(path) -> ReportModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not a JSON report: {exc}") from exc
    return parse_report(payload, str(path))


def _fmt(v) -> str:
    if v is None:
        return "-"
    return f"{v:.6g}"


def _fit_line(label: str, fit: FitModel) -> str:
    return (f"{label}: slope {_fmt(fit.slope)}  CI [{_fmt(fit.lower)}, {_fmt(fit.upper)}]"
            f"  rms {_fmt(fit.residual)}  points {fit.n_points}")


def _flux_table(name: str, rep: FluxReportModel) -> list[str]:
    lines = [f"== {name} ({rep.schema_}) ==", f"{'eps':>14} {'J direct':>14} {'J bilinear':>14} {'residual':>12}"]
    for row in zip(rep.epsilons, rep.j_direct, rep.j_bilinear, rep.identity_residuals):
        lines.append(" ".join(f"{v:>14.6e}" if i < 3 else f"{v:>12.3e}" for i, v in enumerate(row)))
    lines.append(_fit_line("fitted |J| exponent", rep.decay))
    if rep.majorant_decay is not None:
        lines.append(_fit_line("majorant exponent", rep.majorant_decay))
    lines.append(f"extrapolated integral {_fmt(rep.extrapolated_integral)}  energy change {_fmt(rep.energy_change)}")
    return lines


def _criterion_table(name: str, rep: CriterionReportModel) -> list[str]:
    lines = [f"== {name} ({rep.schema_}, mode {rep.mode}) ==", f"{'|y|':>14} {'S3/|y|':>14}"]
    for s, v in zip(rep.shifts, rep.s3_over_y):
        lines.append(f"{s:>14.6e} {v:>14.6e}")
    lines.append(_fit_line("fitted slope", rep.fit))
    if rep.besov_integral is not None:
        lines.append(f"besov integral {_fmt(rep.besov_integral)}  unresolved core {_fmt(rep.besov_remainder)}")
    strip = rep.extras.get("strip_fit") if rep.extras else None
    if strip:
        lines.append(f"strip slope {_fmt(strip['slope'])}  CI [{_fmt(strip['lower'])}, {_fmt(strip['upper'])}]")
        lines.append(f"trace violated: {'yes' if rep.extras.get('trace_violated') else 'no'}")
    lines.append(f"verdict: {rep.verdict.value}")
    return lines


def render(paths) -> tuple[str, str]:
    """Summary text and gnuplot CSV (blocks separated by two blank lines) for report files."""
    reports = [(str(p), load_report(p)) for p in paths]
    families: dict[str, str] = {}
    for name, rep in reports:
        tag = rep.schema_
        fam = _SCHEMA_RE.match(tag).group(1)
        if families.setdefault(fam, tag) != tag:
            raise SchemaError(f"mixed schema versions: {families[fam]} and {tag} ({name})")
    summary: list[str] = []
    blocks: list[str] = []
    for name, rep in reports:
        if isinstance(rep, FluxReportModel):
            summary += _flux_table(name, rep)
            x, y, label = rep.epsilons, [abs(v) for v in rep.j_bilinear], "log_eps,log_abs_J"
        else:
            summary += _criterion_table(name, rep)
            x, y, label = rep.shifts, rep.s3_over_y, "log_shift,log_S3_over_y"
        summary.append("")
        rows = [f"# {name}", f"# {label}"]
        for a, b in zip(x, y):
            if a > 0 and b > 0:
                rows.append(f"{_g17(math.log(a))},{_g17(math.log(b))}")
        blocks.append("\n".join(rows))
    return "\n".join(summary), "\n\n\n".join(blocks) + "\n"
