import json
import math

import numpy as np
import pytest

from enflux import euler
from enflux.errors import StageError, StorageError, ValidationError
from enflux.fields import SmoothSpec, gen_halfspace
from enflux.ofx import read_field, write_field
from enflux.pipeline import LOCK_NAME, MANIFEST_NAME, ExperimentConfig, run
from enflux.reports import load_report
from enflux.spectral import Domain, Grid, VelocityField


def config(out, stages, **kw):
    return ExperimentConfig(output_dir=str(out), stages=stages, **kw)


TG_FLUX = [
    {"id": "tg", "op": "gen", "params": {"kind": "taylor-green", "n": 16}},
    {"id": "flux", "op": "flux", "inputs": ["tg"], "params": {"eps_cells": [3, 4, 5, 6]}},
]


def test_config_text_round_trip_is_exact():
    cfg = config("out", TG_FLUX, seed=7, tolerances={"cfl": 0.25})
    text = cfg.to_text()
    back = ExperimentConfig.from_text(text)
    assert back == cfg
    assert back.to_text() == text
    assert back.digest() == cfg.digest()
    assert list(json.loads(text)) == ["schema", "seed", "output_dir", "tolerances", "stages"]


@pytest.mark.parametrize("bad", [
    {"output_dir": "o", "stages": [{"id": "a", "op": "gen", "params": {"kind": "tg"}}]},
    {"output_dir": "o", "stages": [{"id": "a", "op": "flux", "params": {"eps_cells": [3]}}]},
    {"output_dir": "o", "stages": [{"id": "a b", "op": "gen", "params": {"kind": "abc"}}]},
    {"output_dir": "o", "stages": [{"id": "a", "op": "gen", "params": {"kind": "abc"}}] * 2},
    {"output_dir": "o", "tolerances": {"nope": 1.0}},
    {"output_dir": "o", "tolerances": {"cfl": -1.0}},
    {"output_dir": "o", "extra": 1},
])
def test_config_validation(bad):
    with pytest.raises(ValidationError):
        ExperimentConfig.from_text(json.dumps(bad))


def test_config_schema_version_is_checked():
    with pytest.raises(ValidationError, match="schema"):
        ExperimentConfig.from_text(json.dumps({"schema": "EXPCFG2", "output_dir": "o"}))


def test_empty_pipeline(tmp_path):
    m = run(config(tmp_path / "run", []))
    assert m.stages == [] and m.digests == {} and m.complete and m.exit_code == 0
    assert json.loads((tmp_path / "run" / MANIFEST_NAME).read_text())["schema"] == "RUNMAN1"


def test_taylor_green_flux_pipeline(tmp_path):
    m = run(config(tmp_path / "run", TG_FLUX))
    assert sorted(m.digests) == ["flux.json", "tg.ofx"]
    assert [s.status for s in m.stages] == ["ok", "ok"]
    assert m.grids == [{"kind": "periodic3", "lengths": [2 * math.pi] * 3, "side": 1, "resolution": [16, 16, 16]}]
    rep = load_report(tmp_path / "run" / "flux.json")
    assert len(rep.epsilons) == 4
    assert max(rep.identity_residuals) <= 1e-6
    assert not (tmp_path / "run" / LOCK_NAME).exists()


def test_identical_config_gives_identical_digests(tmp_path):
    stages = TG_FLUX + [
        {"id": "r", "op": "gen", "params": {"kind": "rough", "n": 16, "alpha": 0.4, "band": [1, 5]}},
        {"id": "s", "op": "structfn", "inputs": ["r"], "params": {"shifts": [0.4, 0.8]}},
    ]
    a = run(config(tmp_path / "a", stages, seed=3))
    b = run(config(tmp_path / "b", stages, seed=3))
    c = run(config(tmp_path / "c", stages, seed=4))
    assert a.digests == b.digests
    assert a.digests["r.ofx"] != c.digests["r.ofx"]
    assert a.digests["tg.ofx"] == c.digests["tg.ofx"]


def test_lock_excludes_a_second_run(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    (out / LOCK_NAME).write_text("1")
    with pytest.raises(StorageError, match="locked"):
        run(config(out, []))


def test_failing_stage_keeps_partial_outputs(tmp_path):
    stages = [
        {"id": "tg", "op": "gen", "params": {"kind": "taylor-green", "n": 16}},
        {"id": "ev", "op": "evolve", "inputs": ["tg"], "params": {"T": 1.0, "dt": 0.5}},
        {"id": "never", "op": "extend", "inputs": ["tg"]},
    ]
    with pytest.raises(StageError) as info:
        run(config(tmp_path / "run", stages))
    assert info.value.stage == "ev" and info.value.exit_code == 3
    manifest = json.loads((tmp_path / "run" / MANIFEST_NAME).read_text())
    assert manifest["complete"] is False
    assert [s["status"] for s in manifest["stages"]] == ["ok", "failed"]
    assert "CFL" in manifest["stages"][1]["message"]
    assert list(manifest["digests"]) == ["tg.ofx"]
    read_field(tmp_path / "run" / "tg.ofx")
    assert not (tmp_path / "run" / LOCK_NAME).exists()


def test_missing_input_file_is_an_io_failure(tmp_path):
    stages = [{"id": "m", "op": "mollify", "inputs": [str(tmp_path / "absent.ofx")], "params": {"eps_cells": 4}}]
    with pytest.raises(StageError) as info:
        run(config(tmp_path / "run", stages))
    assert info.value.exit_code == 4


def test_tolerance_override_applies_and_is_restored(tmp_path):
    stages = [
        {"id": "tg", "op": "gen", "params": {"kind": "taylor-green", "n": 16}},
        {"id": "ev", "op": "evolve", "inputs": ["tg"], "params": {"T": 1.0, "dt": 0.05, "stride": 10}},
    ]
    with pytest.raises(StageError):
        run(config(tmp_path / "strict", stages))
    m = run(config(tmp_path / "loose", stages, tolerances={"top_shell_tol": 1e-3}))
    assert m.complete
    assert euler.TOP_SHELL_TOL == 1e-10
    series = json.loads((tmp_path / "loose" / "ev" / "series.json").read_text())
    assert series["times"] == [0.0, 0.5, 1.0]
    energy_csv = (tmp_path / "loose" / "ev" / "energy.csv").read_text().splitlines()
    assert energy_csv[0] == "t,energy,enstrophy,top_shell_fraction" and len(energy_csv) == 4


def test_evolved_series_feeds_flux(tmp_path):
    stages = [
        {"id": "abc", "op": "gen", "params": {"kind": "abc", "n": 16}},
        {"id": "ev", "op": "evolve", "inputs": ["abc"], "params": {"T": 0.2, "dt": 0.05, "stride": 2}},
        {"id": "fl", "op": "flux", "inputs": ["ev"], "params": {"eps_cells": [3, 4, 5], "direct": False}},
    ]
    m = run(config(tmp_path / "run", stages))
    rep = load_report(tmp_path / "run" / "fl.json")
    assert rep.times == [0.0, 0.1, 0.2]
    assert abs(rep.energy_balance_residual) <= 1e-8
    assert m.exit_code == 0


HALF_SHIFTS = [float(v) for v in np.geomspace(0.066, 0.78, 5)]


def test_trace_violation_is_recorded_with_code_three(tmp_path):
    grid = Grid(Domain.half((2 * math.pi, 2 * math.pi, 2 * math.pi)), (16, 16, 96))
    u = gen_halfspace(grid, SmoothSpec(seed=1, k_max=3))
    data = u.data.copy()
    data[2] += 0.3 * np.exp(-grid.coords(2) / 0.3)[None, None, :]
    write_field(tmp_path / "jump.ofx", VelocityField(grid, data))
    write_field(tmp_path / "clean.ofx", u)

    def stages(name):
        return [{"id": "c", "op": "criterion", "inputs": [str(tmp_path / name)],
                 "params": {"mode": "half", "shifts": HALF_SHIFTS}}]

    assert run(config(tmp_path / "ok", stages("clean.ofx"))).exit_code == 0
    m = run(config(tmp_path / "bad", stages("jump.ofx")))
    assert m.exit_code == 3 and m.complete
    assert m.stages[0].status == "hypothesis-violation"
    assert load_report(tmp_path / "bad" / "c.json").verdict.value == "inconclusive"
    assert run(config(tmp_path / "loose", stages("jump.ofx"), tolerances={"trace_tol_rel": 10.0})).exit_code == 0
