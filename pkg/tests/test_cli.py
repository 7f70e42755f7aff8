import json
import os
import subprocess
import sys

import numpy as np
import pytest

from enflux.cli import main
from enflux.ofx import read_field
from enflux.reports import load_report


def test_gen_mollify_flux_render(tmp_path, capsys):
    tg = tmp_path / "tg.ofx"
    assert main(["gen", "--kind", "taylor-green", "--n", "16", "--out", str(tg)]) == 0
    assert read_field(tg).grid.resolution == (16, 16, 16)
    assert main(["mollify", "--in", str(tg), "--eps-cells", "4", "--out", str(tmp_path / "m.ofx")]) == 0
    assert main(["flux", "--in", str(tg), "--eps-cells", "3", "4", "5", "6", "--report", str(tmp_path / "f.json")]) == 0
    assert len(load_report(tmp_path / "f.json").epsilons) == 4
    capsys.readouterr()
    assert main(["render", "--reports", str(tmp_path / "f.json"), "--csv", str(tmp_path / "plot.csv")]) == 0
    assert "fitted |J| exponent" in capsys.readouterr().out
    assert (tmp_path / "plot.csv").read_text().startswith("# ")


def test_structfn_and_modulus_tables(tmp_path):
    r = tmp_path / "r.ofx"
    assert main(["gen", "--kind", "rough", "--n", "16", "--alpha", "0.5", "--band", "1", "5", "--out", str(r)]) == 0
    assert main(["structfn", "--in", str(r), "--shifts", "0.4", "0.8", "--directions", "3",
                 "--report", str(tmp_path / "s.csv")]) == 0
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "shift_or_eps,direction_id,value" and len(lines) == 1 + 2 * 4
    h = tmp_path / "h.ofx"
    assert main(["gen", "--kind", "half", "--n", "16", "16", "32", "--lengths", "6.283185307179586",
                 "6.283185307179586", "9.42477796076938", "--out", str(h)]) == 0
    assert main(["modulus", "--in", str(h), "--radii", "0.2", "0.4", "--report", str(tmp_path / "w.csv")]) == 0
    assert len((tmp_path / "w.csv").read_text().splitlines()) == 3
    ext = tmp_path / "e.ofx"
    assert main(["extend", "--in", str(h), "--out", str(ext)]) == 0
    assert main(["restrict", "--in", str(ext), "--out", str(tmp_path / "back.ofx")]) == 0
    assert np.array_equal(read_field(tmp_path / "back.ofx").data, read_field(h).data)


def test_evolve_writes_snapshot_directory(tmp_path):
    abc = tmp_path / "abc.ofx"
    main(["gen", "--kind", "abc", "--n", "16", "--out", str(abc)])
    snaps = tmp_path / "snaps"
    assert main(["evolve", "--init", str(abc), "--T", "0.2", "--dt", "0.05", "--stride", "2",
                 "--out-dir", str(snaps)]) == 0
    meta = json.loads((snaps / "series.json").read_text())
    assert meta["times"] == [0.0, 0.1, 0.2]
    assert all((snaps / f).exists() for f in meta["files"])


def test_validation_error_exits_two(tmp_path, capsys):
    assert main(["gen", "--kind", "rough", "--n", "16", "--out", str(tmp_path / "x.ofx")]) == 2
    assert "alpha" in capsys.readouterr().err
    assert main(["gen", "--kind", "rough", "--n", "16", "--alpha", "1.5", "--out", str(tmp_path / "x.ofx")]) == 2


def test_numerical_hypothesis_violation_exits_three(tmp_path):
    tg = tmp_path / "tg.ofx"
    main(["gen", "--kind", "taylor-green", "--n", "16", "--out", str(tg)])
    assert main(["evolve", "--in", str(tg), "--T", "1", "--dt", "0.5", "--out", str(tmp_path / "s")]) == 3
    assert main(["evolve", "--in", str(tg), "--T", "1", "--dt", "0.05", "--out", str(tmp_path / "s")]) == 3


def test_io_error_exits_four(tmp_path):
    assert main(["mollify", "--in", str(tmp_path / "absent.ofx"), "--eps-cells", "4",
                 "--out", str(tmp_path / "m.ofx")]) == 4
    (tmp_path / "bad.ofx").write_bytes(b"garbage")
    assert main(["extend", "--in", str(tmp_path / "bad.ofx"), "--out", str(tmp_path / "e.ofx")]) == 4


def test_run_command_and_exit_codes(tmp_path):
    cfg = {
        "output_dir": str(tmp_path / "run"),
        "stages": [
            {"id": "tg", "op": "gen", "params": {"kind": "taylor-green", "n": 16}},
            {"id": "fl", "op": "flux", "inputs": ["tg"], "params": {"eps_cells": [3, 4, 5, 6]}},
        ],
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(tmp_path / "cfg.json")]) == 0
    assert (tmp_path / "run" / "manifest.json").exists()
    cfg["output_dir"] = str(tmp_path / "run2")
    cfg["stages"].append({"id": "ev", "op": "evolve", "inputs": ["tg"], "params": {"T": 1.0, "dt": 0.5}})
    (tmp_path / "cfg2.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(tmp_path / "cfg2.json")]) == 3
    (tmp_path / "cfg3.json").write_text("{")
    assert main(["run", "--config", str(tmp_path / "cfg3.json")]) == 2
    assert main(["run", "--config", str(tmp_path / "absent.json")]) == 4


def test_render_mixed_versions_exits_two(tmp_path):
    tg = tmp_path / "tg.ofx"
    main(["gen", "--kind", "taylor-green", "--n", "16", "--out", str(tg)])
    main(["flux", "--in", str(tg), "--eps-cells", "3", "4", "--no-direct", "--report", str(tmp_path / "a.json")])
    payload = json.loads((tmp_path / "a.json").read_text())
    payload["schema"] = "FLUXR2"
    (tmp_path / "b.json").write_text(json.dumps(payload))
    assert main(["render", "--reports", str(tmp_path / "a.json"), str(tmp_path / "b.json")]) == 2


def test_usage_errors_exit_two():
    with pytest.raises(SystemExit) as info:
        main(["gen"])
    assert info.value.code == 2


def test_console_entry_point_runs():
    env = dict(os.environ, ENFLUX_WORKERS="1")
    out = subprocess.run([sys.executable, "-m", "enflux.cli", "--version"], capture_output=True, text=True, env=env)
    assert out.returncode == 0 and out.stdout.startswith("enflux ")
