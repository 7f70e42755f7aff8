"""Experiment configs, stage handlers and the run manifest.

A config is one JSON document listing stages in order. Each stage reads the
outputs of earlier stages (by id) or named files and writes its own outputs
into the run directory:

* ``gen``, ``mollify``, ``extend``, ``restrict``: ``<id>.ofx``
* ``evolve``: directory ``<id>/`` with snapshots, ``series.json`` and ``energy.csv``
* ``flux``, ``criterion``: ``<id>.json``
* ``structfn``, ``modulus``: ``<id>.csv``

The stage handlers are shared with the CLI subcommands.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import math
import os
import re
import time
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any, Callable, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticError, field_validator, model_validator

from . import __version__
from . import euler, fields, flux, mollifier, reflect, spectral
from .errors import (
    EnfluxError,
    HypothesisWarning,
    RangeError,
    SchemaError,
    StageError,
    StorageError,
    ValidationError,
)
from .ofx import read_field, write_field
from .reports import (
    criterion_report_dict,
    flux_report_dict,
    grid_descriptor,
    modulus_rows,
    structfn_rows,
    write_csv,
    write_json,
)
from .spectral import Domain, Grid, VelocityField

CONFIG_SCHEMA = "EXPCFG1"
MANIFEST_SCHEMA = "RUNMAN1"
LOCK_NAME = ".enflux.lock"
MANIFEST_NAME = "manifest.json"
SERIES_NAME = "series.json"

# config key -> (module, constant)
TOLERANCES = {
    "div_tol_rel": (spectral, "DIV_TOL_REL"),
    "trace_tol_rel": (reflect, "TRACE_TOL_REL"),
    "flux_floor_rel": (flux, "FLUX_FLOOR_REL"),
    "top_shell_tol": (euler, "TOP_SHELL_TOL"),
    "cfl": (euler, "CFL"),
    "seam_mass_tol": (fields, "SEAM_MASS_TOL"),
}

StageName = Literal["gen", "evolve", "extend", "restrict", "mollify", "flux", "structfn", "criterion", "modulus"]
Triple = tuple[float, float, float]
TWO_PI = 2 * math.pi


def _pydantic(model, payload, what: str):
    try:
        return model.model_validate(payload)
    except PydanticError as exc:
        raise ValidationError(f"invalid {what}: {exc}") from exc


# ---- stage parameters ----

class _Params(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GenParams(_Params):
    kind: Literal["taylor-green", "abc", "rough", "smooth", "half"]
    n: Union[int, tuple[int, int, int]] = 32
    lengths: Triple = (TWO_PI, TWO_PI, TWO_PI)
    domain: Literal["periodic3", "hybrid_slab"] = "periodic3"
    alpha: Optional[float] = None
    seed: Optional[int] = None
    band: tuple[int, int] = (1, 16)
    k_max: int = 4
    amplitude: float = 1.0
    A: float = 1.0
    B: float = 1.0
    C: float = 1.0


class EvolveParams(_Params):
    T: float
    dt: float
    stride: int = euler.DEFAULT_STRIDE


class MollifyParams(_Params):
    eps: Optional[float] = None
    eps_cells: Optional[float] = None


class ExtendParams(_Params):
    pass


class RestrictParams(_Params):
    side: Literal[1, -1] = 1


class FluxParams(_Params):
    eps_list: Optional[list[float]] = None
    eps_cells: Optional[list[float]] = None
    direct: bool = True
    majorant: bool = False


class StructfnParams(_Params):
    shifts: list[float]
    directions: Literal[3, 9, 13] = 9


class CriterionParams(_Params):
    mode: Literal["s", "besov", "half"]
    shifts: list[float]
    alpha: Optional[float] = None
    delta: Optional[float] = None
    r_max: Optional[float] = None
    n_theta: int = 3
    directions: Literal[9, 13] = 9


class ModulusParams(_Params):
    radii: list[float]
    n_directions: int = reflect.MODULUS_DIRECTIONS


# ---- config and manifest ----

_ID = re.compile(r"^[A-Za-z0-9_-]+$")


class StageSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    op: StageName
    inputs: list[str] = []
    params: dict[str, Any] = {}

    @field_validator("id")
    @classmethod
    def _check_id(cls, v: str) -> str:
        if not _ID.match(v):
            raise ValueError("stage id may only contain letters, digits, '_' and '-'")
        return v


class ExperimentConfig(BaseModel):
    """Ordered stage list with a seed, an output directory and tolerance overrides."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_: Literal["EXPCFG1"] = Field(default=CONFIG_SCHEMA, alias="schema")
    seed: int = 0
    output_dir: str
    tolerances: dict[str, float] = {}
    stages: list[StageSpec] = []

    @field_validator("tolerances")
    @classmethod
    def _known_tolerances(cls, v: dict[str, float]) -> dict[str, float]:
        unknown = sorted(set(v) - set(TOLERANCES))
        if unknown:
            raise ValueError(f"unknown tolerance keys {unknown}; known: {sorted(TOLERANCES)}")
        if any(not (math.isfinite(x) and x > 0) for x in v.values()):
            raise ValueError("tolerances must be positive and finite")
        return v

    @model_validator(mode="after")
    def _check_stages(self) -> "ExperimentConfig":
        seen: set[str] = set()
        for st in self.stages:
            if st.id in seen:
                raise ValueError(f"duplicate stage id {st.id!r}")
            _pydantic(PARAMS[st.op], st.params, f"parameters of stage {st.id!r}")
            expected = INPUT_COUNT[st.op]
            if expected is not None and len(st.inputs) != expected:
                raise ValueError(f"stage {st.id!r} ({st.op}) takes {expected} input(s), got {len(st.inputs)}")
            if expected is None and not st.inputs:
                raise ValueError(f"stage {st.id!r} ({st.op}) needs at least one input")
            seen.add(st.id)
        return self

    def to_text(self) -> str:
        return json.dumps(self.model_dump(mode="json", by_alias=True), indent=2) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
        if isinstance(payload, dict) and payload.get("schema", CONFIG_SCHEMA) != CONFIG_SCHEMA:
            raise SchemaError(f"unsupported config schema {payload.get('schema')!r} (expected {CONFIG_SCHEMA})")
        return _pydantic(cls, payload, "config")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


class StageRecord(BaseModel):
    id: str
    op: str
    status: Literal["ok", "hypothesis-violation", "failed"]
    seconds: float
    outputs: list[str]
    message: str = ""


class RunManifest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    schema_: Literal["RUNMAN1"] = Field(default=MANIFEST_SCHEMA, alias="schema")
    config_sha256: str
    tool_version: str
    seed: int
    complete: bool
    exit_code: int
    grids: list[dict]
    stages: list[StageRecord]
    digests: dict[str, str]

    def to_text(self) -> str:
        return json.dumps(self.model_dump(mode="json", by_alias=True), indent=2) + "\n"


# ---- input loading ----

@dataclass
class Loaded:
    fields: list[VelocityField]
    times: Optional[list[float]] = None


def load_input(path) -> Loaded:
    """A single OFX1 file, or an evolve directory holding ``series.json``."""
    path = Path(path)
    if path.is_dir():
        index = path / SERIES_NAME
        try:
            meta = json.loads(index.read_text(encoding="utf-8"))
        except OSError as exc:
            raise StorageError(f"{path} is not a snapshot directory: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise StorageError(f"corrupt {index}: {exc}") from exc
        return Loaded([read_field(path / name) for name in meta["files"]], [float(t) for t in meta["times"]])
    return Loaded([read_field(path)])


def load_inputs(paths) -> Loaded:
    """Several inputs: a single series passes through; plain files form an ensemble."""
    loaded = [load_input(p) for p in paths]
    if len(loaded) == 1:
        return loaded[0]
    if any(item.times is not None for item in loaded):
        raise ValidationError("snapshot directories cannot be mixed with other inputs")
    return Loaded([f for item in loaded for f in item.fields])


def _single(loaded: Loaded) -> VelocityField:
    if len(loaded.fields) != 1:
        raise ValidationError("stage expects a single field")
    return loaded.fields[0]


# ---- stage handlers ----

@dataclass
class StageOutcome:
    outputs: list[Path]
    status: str = "ok"
    message: str = ""
    grids: list[Grid] = dc_field(default_factory=list)


def _resolution(n) -> tuple[int, int, int]:
    return (n, n, n) if isinstance(n, int) else tuple(n)


def generate(p: GenParams, seed: int) -> VelocityField:
    seed = seed if p.seed is None else p.seed
    res = _resolution(p.n)
    if p.kind == "half":
        grid = Grid(Domain.half(p.lengths), res)
        base = (fields.RoughSpec(p.alpha, seed, p.band, p.amplitude) if p.alpha is not None
                else fields.SmoothSpec(seed, p.k_max, p.amplitude))
        return fields.gen_halfspace(grid, base)
    dom = Domain.periodic(p.lengths) if p.domain == "periodic3" else Domain.hybrid(p.lengths)
    grid = Grid(dom, res)
    if p.kind == "taylor-green":
        return fields.gen_taylor_green(grid)
    if p.kind == "abc":
        return fields.gen_abc(grid, p.A, p.B, p.C)
    if p.kind == "rough":
        if p.alpha is None:
            raise ValidationError("rough generation needs alpha")
        return fields.gen_rough(grid, fields.RoughSpec(p.alpha, seed, p.band, p.amplitude))
    return fields.gen_smooth(grid, fields.SmoothSpec(seed, p.k_max, p.amplitude))


def _out_file(out: Path, suffix: str) -> Path:
    return out if out.suffix == suffix else out.with_name(out.name + suffix)


def stage_gen(p: GenParams, inputs: list[Path], out: Path, seed: int) -> StageOutcome:
    u = generate(p, seed)
    path = _out_file(out, ".ofx")
    write_field(path, u)
    return StageOutcome([path], grids=[u.grid])


def stage_evolve(p: EvolveParams, inputs: list[Path], out: Path, seed: int) -> StageOutcome:
    u0 = _single(load_input(inputs[0]))
    series = euler.integrate(u0, p.T, p.dt, stride=p.stride)
    out.mkdir(parents=True, exist_ok=True)
    outputs, names = [], []
    for i, f in enumerate(series.fields):
        name = f"snap_{i:05d}.ofx"
        write_field(out / name, f)
        names.append(name)
        outputs.append(out / name)
    meta = {
        "times": list(series.times),
        "files": names,
        "dt": series.dt,
        "max_energy_drift": series.max_energy_drift,
    }
    write_json(out / SERIES_NAME, meta)
    rows = list(zip(series.times, series.energy_series, series.enstrophy_series, series.top_shell_series))
    write_csv(out / "energy.csv", rows, ("t", "energy", "enstrophy", "top_shell_fraction"))
    outputs += [out / SERIES_NAME, out / "energy.csv"]
    return StageOutcome(outputs, grids=[series.grid])


def _eps_values(grid: Grid, absolute, cells) -> list[float]:
    if (absolute is None) == (cells is None):
        raise ValidationError("give exactly one of eps / eps_cells")
    if absolute is not None:
        return list(absolute) if isinstance(absolute, list) else [absolute]
    h = max(grid.spacing)
    return [c * h for c in (cells if isinstance(cells, list) else [cells])]


def stage_mollify(p: MollifyParams, inputs: list[Path], out: Path, seed: int) -> StageOutcome:
    u = _single(load_input(inputs[0]))
    (eps,) = _eps_values(u.grid, p.eps, p.eps_cells)
    v = mollifier.convolve(u, mollifier.build(eps, u.grid))
    path = _out_file(out, ".ofx")
    write_field(path, v)
    return StageOutcome([path], grids=[v.grid])


def stage_extend(p: ExtendParams, inputs: list[Path], out: Path, seed: int) -> StageOutcome:
    u = _single(load_input(inputs[0]))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", HypothesisWarning)
        v = reflect.extend(u)
    path = _out_file(out, ".ofx")
    write_field(path, v)
    hyp = [str(w.message) for w in caught if issubclass(w.category, HypothesisWarning)]
    if hyp:
        return StageOutcome([path], "hypothesis-violation", hyp[0], [v.grid])
    return StageOutcome([path], grids=[v.grid])


def stage_restrict(p: RestrictParams, inputs: list[Path], out: Path, seed: int) -> StageOutcome:
    u = _single(load_input(inputs[0]))
    v = reflect.restrict(u, p.side)
    path = _out_file(out, ".ofx")
    write_field(path, v)
    return StageOutcome([path], grids=[v.grid])


def stage_flux(p: FluxParams, inputs: list[Path], out: Path, seed: int) -> StageOutcome:
    loaded = load_inputs(inputs)
    grid = loaded.fields[0].grid
    eps = sorted(_eps_values(grid, p.eps_list, p.eps_cells), reverse=True)
    rep = flux.dissipation_estimate(loaded.fields, eps, direct=p.direct, majorant=p.majorant, times=loaded.times)
    path = _out_file(out, ".json")
    write_json(path, flux_report_dict(rep, grid))
    return StageOutcome([path], grids=[grid])


def stage_structfn(p: StructfnParams, inputs: list[Path], out: Path, seed: int) -> StageOutcome:
    u = _single(load_input(inputs[0]))
    shifts = sorted(set(p.shifts), reverse=True)
    dirs = flux.lattice_directions(p.directions)
    per_dir = [[flux.structure_fn(u, r * d) for d in dirs] for r in shifts]
    path = _out_file(out, ".csv")
    write_csv(path, structfn_rows(shifts, per_dir))
    return StageOutcome([path], grids=[u.grid])


def besov_report(u: VelocityField, delta: float, cutoffs, r_max: float | None, n_theta: int) -> flux.CriterionReport:
    """Besov integral per core cutoff; the verdict reads the S3/|y| slope against delta.

    The integral converges at the origin iff S3(r)/r decays faster than r^delta,
    so a fitted slope confidently above ``delta`` reads as finite ("vanishing")
    and confidently below as divergent ("non-vanishing").
    """
    grid = u.grid.require_periodic()
    cut = np.asarray(sorted(set(float(c) for c in cutoffs), reverse=True))
    r_max = min(grid.domain.lengths) / 4 if r_max is None else r_max
    if cut[0] >= r_max:
        raise RangeError("core cutoffs must lie below r_max")
    parts = [flux.besov_breakdown(u, delta, r_max, core=c, n_theta=n_theta) for c in cut]
    dirs, wts = flux.sphere_rule(n_theta)
    u_hat = spectral.rfft3(u.data)
    per_dir = np.array([[flux._cubed_increment_sum(grid, u.data, r * d, u_hat) / r for d in dirs] for r in cut])
    values = per_dir @ wts / wts.sum()
    fit = flux.fit_power_law(cut, values)
    if fit.lower > delta:
        verdict = flux.Verdict.VANISHING
    elif fit.upper < delta:
        verdict = flux.Verdict.NON_VANISHING
    else:
        verdict = flux.Verdict.INCONCLUSIVE
    return flux.CriterionReport(
        mode="besov",
        shifts=tuple(float(c) for c in cut),
        direction_vectors=tuple(tuple(float(x) for x in d) for d in dirs),
        per_direction=tuple(tuple(float(v) for v in row) for row in per_dir),
        s3_over_y=tuple(float(v) for v in values),
        fit=fit,
        verdict=verdict,
        besov_integral=parts[-1].value,
        besov_remainder=parts[-1].remainder,
        extras={
            "delta": delta,
            "r_max": r_max,
            "cutoff_values": [b.value for b in parts],
            "cutoff_remainders": [b.remainder for b in parts],
        },
    )


def stage_criterion(p: CriterionParams, inputs: list[Path], out: Path, seed: int) -> StageOutcome:
    loaded = load_inputs(inputs)
    grid = loaded.fields[0].grid
    weights = None if loaded.times is None else flux.trapezoid_weights(loaded.times)
    dirs = flux.lattice_directions(p.directions)
    status, message = "ok", ""
    if p.mode == "s":
        rep = flux.s_condition(loaded.fields, p.shifts, weights=weights, directions=dirs)
    elif p.mode == "half":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", HypothesisWarning)
            rep = reflect.halfspace_criterion(loaded.fields, p.shifts, weights=weights, directions=dirs)
        if rep.extras["trace_violated"]:
            status = "hypothesis-violation"
            message = f"normal trace max|u3(x3=0)| = {rep.extras['trace_max']:.3e} violates the boundary hypothesis"
    else:
        if p.delta is None and p.alpha is None:
            raise ValidationError("besov mode needs delta or alpha")
        delta = p.delta if p.delta is not None else 3 * p.alpha - 1
        rep = besov_report(_single(loaded), delta, p.shifts, p.r_max, p.n_theta)
    path = _out_file(out, ".json")
    write_json(path, criterion_report_dict(rep, grid))
    return StageOutcome([path], status, message, [grid])


def stage_modulus(p: ModulusParams, inputs: list[Path], out: Path, seed: int) -> StageOutcome:
    u = _single(load_input(inputs[0]))
    mod = reflect.continuity_modulus(u, p.radii, p.n_directions)
    path = _out_file(out, ".csv")
    write_csv(path, modulus_rows(mod))
    return StageOutcome([path], grids=[u.grid])


PARAMS: dict[str, type[_Params]] = {
    "gen": GenParams,
    "evolve": EvolveParams,
    "extend": ExtendParams,
    "restrict": RestrictParams,
    "mollify": MollifyParams,
    "flux": FluxParams,
    "structfn": StructfnParams,
    "criterion": CriterionParams,
    "modulus": ModulusParams,
}

HANDLERS: dict[str, Callable[..., StageOutcome]] = {
    "gen": stage_gen,
    "evolve": stage_evolve,
    "extend": stage_extend,
    "restrict": stage_restrict,
    "mollify": stage_mollify,
    "flux": stage_flux,
    "structfn": stage_structfn,
    "criterion": stage_criterion,
    "modulus": stage_modulus,
}

# None: one or more
INPUT_COUNT: dict[str, Optional[int]] = {
    "gen": 0,
    "evolve": 1,
    "extend": 1,
    "restrict": 1,
    "mollify": 1,
    "flux": None,
    "structfn": 1,
    "criterion": None,
    "modulus": 1,
}

OUTPUT_SUFFIX = {
    "gen": ".ofx",
    "evolve": "",
    "extend": ".ofx",
    "restrict": ".ofx",
    "mollify": ".ofx",
    "flux": ".json",
    "structfn": ".csv",
    "criterion": ".json",
    "modulus": ".csv",
}


def run_stage(op: str, params: dict, inputs: list[Path], out: Path, seed: int = 0) -> StageOutcome:
    p = _pydantic(PARAMS[op], params, f"{op} parameters")
    return HANDLERS[op](p, [Path(i) for i in inputs], Path(out), seed)


# ---- tolerance overrides and locking ----

@contextlib.contextmanager
def tolerance_overrides(values: dict[str, float]):
    saved = []
    try:
        for key, val in values.items():
            module, name = TOLERANCES[key]
            saved.append((module, name, getattr(module, name)))
            setattr(module, name, float(val))
        yield
    finally:
        for module, name, old in reversed(saved):
            setattr(module, name, old)


@contextlib.contextmanager
def directory_lock(directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
    except FileExistsError as exc:
        raise StorageError(f"{directory} is locked by another run ({lock})") from exc
    except OSError as exc:
        raise StorageError(f"cannot create lock in {directory}: {exc}") from exc
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(OSError):
            lock.unlink()


# ---- run ----

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolve_input(name: str, produced: dict[str, Path]) -> Path:
    if name in produced:
        return produced[name]
    path = Path(name)
    if not path.exists():
        raise StorageError(f"input {name!r} is neither an earlier stage nor an existing file")
    return path


def run(config: ExperimentConfig, base_dir: Path | None = None) -> RunManifest:
    """Execute the stages in order and write ``manifest.json`` into the output directory.

    A failing stage stops the run: the manifest is written with the stage
    marked failed, earlier outputs stay on disk, and :class:`StageError` is
    raised. Hypothesis violations that still produce a report (for example a
    half-space trace violation) are recorded and give exit code 3.
    """
    out_dir = Path(config.output_dir)
    if base_dir is not None and not out_dir.is_absolute():
        out_dir = base_dir / out_dir
    records: list[StageRecord] = []
    grids: list[dict] = []
    produced: dict[str, Path] = {}
    files: list[Path] = []
    exit_code = 0

    def manifest(complete: bool) -> RunManifest:
        digests = {p.relative_to(out_dir).as_posix(): _sha256(p) for p in sorted(set(files))}
        return RunManifest(
            config_sha256=config.digest(),
            tool_version=__version__,
            seed=config.seed,
            complete=complete,
            exit_code=exit_code,
            grids=grids,
            stages=records,
            digests=digests,
        )

    def save(m: RunManifest) -> None:
        try:
            (out_dir / MANIFEST_NAME).write_text(m.to_text(), encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot write manifest: {exc}") from exc

    with directory_lock(out_dir), tolerance_overrides(config.tolerances):
        for st in config.stages:
            start = time.perf_counter()
            target = out_dir / (st.id + OUTPUT_SUFFIX[st.op])
            try:
                inputs = [_resolve_input(name, produced) for name in st.inputs]
                outcome = run_stage(st.op, st.params, inputs, target, config.seed)
            except (EnfluxError, OSError) as exc:
                cause = exc if isinstance(exc, EnfluxError) else StorageError(str(exc))
                exit_code = cause.exit_code
                records.append(StageRecord(id=st.id, op=st.op, status="failed",
                                           seconds=time.perf_counter() - start, outputs=[], message=str(cause)))
                save(manifest(False))
                raise StageError(st.id, cause) from exc
            produced[st.id] = target
            files.extend(outcome.outputs)
            for g in outcome.grids:
                desc = grid_descriptor(g)
                if desc not in grids:
                    grids.append(desc)
            if outcome.status != "ok":
                exit_code = max(exit_code, 3)
            records.append(StageRecord(
                id=st.id,
                op=st.op,
                status=outcome.status,
                seconds=time.perf_counter() - start,
                outputs=[p.relative_to(out_dir).as_posix() for p in outcome.outputs],
                message=outcome.message,
            ))
        m = manifest(True)
        save(m)
    return m
