import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from enflux import ofx
from enflux.errors import SchemaError, StorageError
from enflux.flux import Verdict
from enflux.pipeline import run_stage
from enflux.reports import csv_text, load_report, parse_report, render, structfn_rows
from enflux.spectral import Domain, Grid, VelocityField

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def reports(tmp_path_factory):
    d = tmp_path_factory.mktemp("reports")
    run_stage("gen", {"kind": "taylor-green", "n": 16}, [], d / "tg")
    run_stage("flux", {"eps_cells": [3, 4, 5, 6]}, [d / "tg.ofx"], d / "flux")
    run_stage("gen", {"kind": "rough", "n": 32, "alpha": 0.3, "band": [1, 10]}, [], d / "rough")
    run_stage("criterion", {"mode": "s", "shifts": list(np.geomspace(0.2, 2.4, 6))}, [d / "rough.ofx"], d / "crit")
    return d


# ---- OFX1 ----

@settings(max_examples=10)
@given(seed=st.integers(0, 2**32 - 1))
def test_ofx_round_trip_is_bit_exact(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    g = Grid.periodic((4, 6, 8), lengths=(1.0, 2.5, TWO_PI))
    u = VelocityField(g, rng.standard_normal((3, *g.shape)))
    path = tmp_path_factory.mktemp("ofx") / "u.ofx"
    digest = ofx.write_field(path, u)
    back = ofx.read_field(path)
    assert back.grid == g
    assert np.array_equal(back.data, u.data)
    assert len(digest) == 64


@pytest.mark.parametrize("grid", [
    Grid(Domain.half((TWO_PI, TWO_PI, 3 * math.pi)), (16, 16, 32)),
    Grid(Domain.half((TWO_PI, TWO_PI, 3 * math.pi), side=-1), (8, 8, 8)),
    Grid(Domain.hybrid((TWO_PI, TWO_PI, math.pi)), (8, 8, 8)),
])
def test_ofx_round_trip_on_slabs(tmp_path, grid):
    rng = np.random.default_rng(0)
    u = VelocityField(grid, rng.standard_normal((3, *grid.shape)))
    ofx.write_field(tmp_path / "u.ofx", u)
    back = ofx.read_field(tmp_path / "u.ofx")
    assert back.grid == grid and np.array_equal(back.data, u.data)


def test_ofx_header_layout():
    g = Grid(Domain.half((TWO_PI, TWO_PI, 3 * math.pi)), (8, 8, 8))
    blob = ofx.encode(VelocityField.zeros(g))
    header = json.loads(blob[: blob.index(b"\n")])
    assert header["format"] == "OFX1" and header["kind"] == "half_slab"
    assert header["x3_nodes"] == 9 and header["layout"] == "x3-fastest"
    assert len(blob) - blob.index(b"\n") - 1 == 3 * 8 * 8 * 9 * 8


def test_ofx_data_order_is_x3_fastest():
    g = Grid.periodic((2, 2, 4))
    data = np.arange(3 * 16, dtype=float).reshape(3, 2, 2, 4)
    blob = ofx.encode(VelocityField(g, data))
    body = np.frombuffer(blob[blob.index(b"\n") + 1:], dtype="<f8")
    assert np.array_equal(body[:4], data[0, 0, 0, :])


def _corrupt(blob):
    cut = blob.index(b"\n")
    header = json.loads(blob[:cut])
    return header, blob[cut + 1:]


@pytest.mark.parametrize("mutation", ["truncate", "magic", "no_header", "dtype", "bad_json", "shape"])
def test_ofx_corruption_is_a_storage_error(tmp_path, mutation):
    g = Grid.periodic(4)
    blob = ofx.encode(VelocityField.zeros(g))
    header, body = _corrupt(blob)
    if mutation == "truncate":
        blob = blob[:-8]
    elif mutation == "magic":
        header["format"] = "OFX9"
        blob = json.dumps(header).encode() + b"\n" + body
    elif mutation == "no_header":
        blob = body.replace(b"\n", b"\x00")
    elif mutation == "dtype":
        header["dtype"] = "f32-le"
        blob = json.dumps(header).encode() + b"\n" + body
    elif mutation == "bad_json":
        blob = b"{not json\n" + body
    else:
        header["resolution"] = [4, 4, 5]
        blob = json.dumps(header).encode() + b"\n" + body
    path = tmp_path / "bad.ofx"
    path.write_bytes(blob)
    with pytest.raises(StorageError):
        ofx.read_field(path)


def test_ofx_missing_file(tmp_path):
    with pytest.raises(StorageError):
        ofx.read_field(tmp_path / "absent.ofx")


# ---- report files ----

def test_flux_report_round_trip(reports):
    payload = json.loads((reports / "flux.json").read_text())
    rep = load_report(reports / "flux.json")
    assert rep.schema_ == "FLUXR1"
    assert rep.epsilons == payload["epsilons"]
    assert len(rep.epsilons) == 4
    assert max(rep.identity_residuals) <= 1e-6
    # floats survive the JSON text exactly
    assert json.loads(json.dumps(payload)) == payload


def test_criterion_report_round_trip(reports):
    rep = load_report(reports / "crit.json")
    assert rep.schema_ == "CRITR1" and rep.mode == "s"
    assert rep.verdict in set(Verdict)
    assert len(rep.shifts) == len(rep.s3_over_y) == 6


def test_verdict_strings_are_a_closed_set(reports):
    payload = json.loads((reports / "crit.json").read_text())
    assert {v.value for v in Verdict} == {"vanishing", "non-vanishing", "inconclusive", "conserving"}
    payload["verdict"] = "non-conserving"
    with pytest.raises(SchemaError):
        parse_report(payload)


@pytest.mark.parametrize("tag", ["FLUXR2", "FLUXR", "", None, "NOPE1"])
def test_unsupported_schema_tags(reports, tag):
    payload = json.loads((reports / "flux.json").read_text())
    payload["schema"] = tag
    with pytest.raises(SchemaError):
        parse_report(payload)


def test_non_json_report(tmp_path):
    (tmp_path / "r.json").write_text("nope")
    with pytest.raises(SchemaError):
        load_report(tmp_path / "r.json")
    with pytest.raises(StorageError):
        load_report(tmp_path / "absent.json")


# ---- rendering ----

def test_render_flux_table(reports):
    summary, csv = render([reports / "flux.json"])
    lines = summary.splitlines()
    head = next(i for i, line in enumerate(lines) if "J direct" in line)
    rows = lines[head + 1: head + 5]
    assert len(rows) == 4 and all(len(r.split()) == 4 for r in rows)
    assert lines[head + 5].startswith("fitted |J| exponent: slope")


def test_render_criterion_table_and_csv(reports):
    summary, csv = render([reports / "crit.json", reports / "flux.json"])
    rep = load_report(reports / "crit.json")
    assert f"verdict: {rep.verdict.value}" in summary
    assert "fitted slope" in summary
    blocks = csv.strip("\n").split("\n\n\n")
    assert len(blocks) == 2
    rows = [r for r in blocks[0].splitlines() if not r.startswith("#")]
    x, y = zip(*(map(float, r.split(",")) for r in rows))
    assert x == tuple(math.log(s) for s in rep.shifts)
    assert y == tuple(math.log(v) for v in rep.s3_over_y)


def test_render_rejects_mixed_versions(reports, tmp_path):
    payload = json.loads((reports / "crit.json").read_text())
    payload["schema"] = "CRITR2"
    (tmp_path / "new.json").write_text(json.dumps(payload))
    with pytest.raises(SchemaError, match="CRITR2"):
        render([reports / "crit.json", tmp_path / "new.json"])


# ---- CSV ----

def test_csv_uses_seventeen_digits():
    text = csv_text([(0.1, 0, 1 / 3)])
    lines = text.splitlines()
    assert lines[0] == "shift_or_eps,direction_id,value"
    a, j, v = lines[1].split(",")
    assert float(a) == 0.1 and float(v) == 1 / 3
    assert v == "0.33333333333333331"


def test_structfn_rows_include_direction_mean():
    rows = structfn_rows([0.5], [[1.0, 2.0, 3.0]])
    assert rows[-1] == (0.5, "mean", 2.0)
    assert [r[1] for r in rows[:-1]] == [0, 1, 2]
