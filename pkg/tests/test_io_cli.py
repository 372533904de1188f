import json

import numpy as np
import pytest

from amoebalab import io
from amoebalab.cli import (EXIT_NUMERIC, EXIT_OK, EXIT_SCHEMA, SchemaError, _join_negative_values, main,
                           parse_points, parse_residues, thread_cap)
from amoebalab.geometry import Grid
from amoebalab.superforms import GridField

SMALL_CLASSICAL = ["classical", "--poly", "1 + z1 + z2", "--box", "-4,4,-4,4", "--grid", "40",
                   "--fibers", "80", "--angles", "16", "--nq", "64", "--ma-grid", "9", "--ma-nq", "64",
                   "--csv-grid", "5", "--convex-trials", "20", "--tol-deg", "6"]
SMALL_SUPERFORM = ["superform-check", "--trials", "10", "--forms", "4", "--points", "3", "--seed", "1"]


def _run(argv, tmp_path, name="report.json"):
    out = tmp_path / name
    status = main(list(argv) + ["--report", str(out), "--no-timestamp"])
    return status, out


# -- schema errors -------------------------------------------------------------

@pytest.mark.parametrize("argv", [
    ["classical", "--poly", "1 + z1 + z2", "--box", "1,-1,-1,1"],
    ["classical", "--poly", "1 + z1 + z2", "--box", "0,0,-1,1"],
    ["classical", "--poly", "1 + + z1"],
    ["classical", "--poly", "1 + z1 + z2", "--grid", "8"],
    ["generalized", "--points", "0,0", "--residues", "1,0;0,1", "--seed", "0"],
    ["generalized", "--points", "0,1", "--residues", "1,0", "--seed", "0"],
    ["generalized", "--points", "0,1", "--residues", "1,0;0,1", "--seed", "0", "--samples", "10"],
    ["fan-limit", "--points", "0,1", "--residues", "1,0;0,1", "--t", "4,2"],
])
def test_schema_errors_exit_2(argv, tmp_path, capsys):
    status, out = _run(argv, tmp_path)
    assert status == EXIT_SCHEMA
    assert "schema error" in capsys.readouterr().err
    assert not out.exists()


def test_bad_thread_variable_exits_2(tmp_path, monkeypatch):
    monkeypatch.setenv("AMOEBALAB_THREADS", "x")
    assert _run(SMALL_SUPERFORM, tmp_path)[0] == EXIT_SCHEMA
    monkeypatch.setenv("AMOEBALAB_THREADS", "0")
    assert _run(SMALL_SUPERFORM, tmp_path)[0] == EXIT_SCHEMA


def test_generalized_requires_a_seed(tmp_path):
    with pytest.raises(SystemExit):
        main(["generalized", "--points", "0,1", "--residues", "1,0;0,1"])


# -- successful runs -------------------------------------------------------------

def test_superform_check_passes_and_echoes_tolerances(tmp_path, monkeypatch):
    monkeypatch.setenv("AMOEBALAB_THREADS", "1")
    status, out = _run(SMALL_SUPERFORM, tmp_path)
    assert status == EXIT_OK
    rep = io.read_report(out)
    assert rep["failed_checks"] == [] and rep["exit_status"] == 0
    assert rep["tolerances"] == {"calculus": 1e-12, "theta": 1e-8}
    assert rep["config"]["params"]["threads"] == 1
    assert rep["seed"] == 1 and "timestamp" not in rep
    assert set(rep["versions"]) >= {"amoebalab", "numpy", "scipy"}


def test_impossible_tolerance_exits_3_naming_the_check(tmp_path, capsys):
    status, out = _run(SMALL_SUPERFORM + ["--calculus-tol", "1e-300"], tmp_path)
    assert status == EXIT_NUMERIC
    rep = io.read_report(out)
    assert rep["failed_checks"] == ["calculus"]
    assert "calculus" in capsys.readouterr().err


def test_superform_report_is_byte_identical(tmp_path):
    a = _run(SMALL_SUPERFORM, tmp_path, "a.json")[1].read_bytes()
    b = _run(SMALL_SUPERFORM, tmp_path, "b.json")[1].read_bytes()
    assert a == b


def test_classical_run_writes_all_artifacts(tmp_path):
    ppm, csv_path = tmp_path / "r.ppm", tmp_path / "r.csv"
    status, out = _run(SMALL_CLASSICAL + ["--emit", str(ppm), "--csv", str(csv_path)], tmp_path)
    rep = io.read_report(out)
    assert rep["components"]["count"] == 3
    assert status == (EXIT_OK if not rep["failed_checks"] else EXIT_NUMERIC)
    img = io.read_ppm(ppm)
    assert img.shape == (40, 40, 3)
    assert ppm.read_bytes().startswith(b"P6\n40 40\n255\n")
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "x1,x2,R" and len(lines) == 1 + 25
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    # x1 varies slowest
    assert np.all(np.diff(rows[:, 0]) >= 0) and rows[0, 1] < rows[1, 1]
    assert rows[0, :2].tolist() == [-3.2, -3.2]
    # far in the (x1 large) corner the Ronkin function of 1 + z1 + z2 is x1
    far = rows[(rows[:, 0] == 3.2) & (rows[:, 1] == -3.2)][0]
    assert far[2] == pytest.approx(3.2, abs=1e-2)


def test_negative_box_values_are_accepted(tmp_path):
    status, out = _run(SMALL_CLASSICAL[:4] + ["-4,4,-4,4"] + SMALL_CLASSICAL[5:], tmp_path)
    assert io.read_report(out)["config"]["box"] == [-4.0, 4.0, -4.0, 4.0]


# -- helpers and formats ---------------------------------------------------------

def test_join_negative_values():
    assert _join_negative_values(["--box", "-6,6,-6,6", "--grid", "20"]) == ["--box=-6,6,-6,6", "--grid", "20"]
    assert _join_negative_values(["--t", "1,2"]) == ["--t", "1,2"]
    assert _join_negative_values(["--a", "-v"]) == ["--a", "-v"]


def test_parse_points_and_residues():
    assert parse_points("0, 1, 0.5+2i") == [0, 1, 0.5 + 2j]
    assert parse_residues("1,0;0,1") == [[1.0, 0.0], [0.0, 1.0]]
    with pytest.raises(SchemaError):
        parse_points("0,,1")
    with pytest.raises(SchemaError):
        parse_points("0,abc")
    with pytest.raises(SchemaError):
        parse_residues("1,0;0")
    with pytest.raises(SchemaError):
        parse_residues("1,x;0,1")


def test_thread_cap():
    assert thread_cap({}) is None
    assert thread_cap({"AMOEBALAB_THREADS": "3"}) == 3
    for bad in ("-1", "0", "two"):
        with pytest.raises(SchemaError):
            thread_cap({"AMOEBALAB_THREADS": bad})


def test_dumps_report_format():
    text = io.dumps_report({"b": np.float64(np.nan), "a": np.arange(2), "c": 1 + 2j, "d": np.bool_(True)},
                           timestamp=False)
    assert text == ('{\n  "a": [\n    0,\n    1\n  ],\n  "b": null,\n  "c": [\n    1.0,\n    2.0\n  ],\n'
                    '  "d": true,\n  "schema": "amoebalab/1"\n}\n')
    stamped = json.loads(io.dumps_report({}, timestamp=True))
    assert len(stamped["timestamp"]) == 20 and stamped["timestamp"].endswith("Z")
    with pytest.raises(TypeError):
        io.to_jsonable(object())


def test_read_report_checks_the_schema(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"schema": "other/9"}')
    with pytest.raises(ValueError, match="schema"):
        io.read_report(p)
    io.write_report(p, {"k": 1}, timestamp=False)
    assert io.read_report(p) == {"k": 1, "schema": "amoebalab/1"}


def test_ppm_orientation_and_palette(tmp_path):
    labels = np.zeros((3, 2), dtype=int)  # indexed [i1, i2]: width 3, height 2
    labels[2, 1] = 1  # largest x1, largest x2: top-right pixel
    labels[0, 0] = 2  # bottom-left pixel
    p = tmp_path / "t.ppm"
    io.write_ppm(p, labels)
    raw = p.read_bytes()
    assert raw[:11] == b"P6\n3 2\n255\n" and len(raw) == 11 + 18
    img = io.read_ppm(p)
    assert tuple(img[0, 2]) == io.PALETTE[0]
    assert tuple(img[1, 0]) == io.PALETTE[1]
    assert img[0, 0].tolist() == [0, 0, 0]


def test_grid_csv_round_trip(tmp_path):
    g = Grid((0, 1, 0, 2), (2, 2))
    f = GridField(g, np.array([[0.1, 0.2], [1 / 3, -4.0]]))
    p = tmp_path / "g.csv"
    io.write_grid_csv(p, f)
    assert p.read_text() == ("x1,x2,R\n0.25,0.5,0.1\n0.25,1.5,0.2\n"
                             "0.75,0.5,0.3333333333333333\n0.75,1.5,-4.0\n")
