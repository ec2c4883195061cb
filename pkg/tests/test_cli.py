import json
import math
import subprocess
import sys

import numpy as np
import pytest

from rpmanifold.atlas import build_atlas
from rpmanifold.errors import ValidationError
from rpmanifold.lift import load_path_csv, signature
from rpmanifold.cli import (EXIT_NUMERIC, EXIT_OK, EXIT_PARSE, EXIT_VALIDATION,
                            RunConfig, dumps, main, run)


def _csv(path, times, points):
    rows = ["t," + ",".join(f"x{k + 1}" for k in range(len(points[0])))]
    rows += [",".join(repr(float(v)) for v in [t, *p]) for t, p in zip(times, points)]
    path.write_text("\n".join(rows) + "\n")
    return str(path)


@pytest.fixture
def lpath(tmp_path):
    return _csv(tmp_path / "l.csv", [0.0, 1.0, 2.0], [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])


def _call(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    return code, json.loads(out)


# ---------------------------------------------------------------------- sig

def test_sig_l_path(capsys, tmp_path, lpath):
    code, rep = _call(capsys, ["sig", lpath, "--out", str(tmp_path / "o")])
    assert code == EXIT_OK
    assert rep["segments"] == 2 and rep["level"] == 2
    assert rep["signature"][1] == [1, 1]
    assert rep["signature"][2] == [[0.5, 1], [0, 0.5]]
    saved = json.loads((tmp_path / "o" / "sig.json").read_text())
    assert saved["signature"] == rep["signature"]


def test_sig_higher_level_extends(capsys, tmp_path, lpath):
    code, rep = _call(capsys, ["sig", lpath, "--level", "3", "--out", str(tmp_path)])
    assert code == EXIT_OK and rep["level"] == 3
    # third grade of the L path: e1e1e2 = 1/2, e1e2e2 = 1/2
    g3 = np.array(rep["signature"][3])
    assert g3[0, 0, 1] == pytest.approx(0.5) and g3[0, 1, 1] == pytest.approx(0.5)


def test_output_is_deterministic(tmp_path, lpath):
    outs = []
    for k in range(2):
        proc = subprocess.run([sys.executable, "-m", "rpmanifold.cli", "sig", lpath, "--emit-trace",
                               "--out", str(tmp_path / f"r{k}")], capture_output=True, text=True)
        assert proc.returncode == 0
        outs.append((tmp_path / f"r{k}" / "sig_trace.csv").read_bytes())
    assert outs[0] == outs[1]


def test_floats_round_trip_exactly(capsys, tmp_path):
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(5, 1)).tolist()
    path = _csv(tmp_path / "r.csv", [0.0, 0.1, 0.2, 0.3, 0.4], pts)
    code, rep = _call(capsys, ["sig", path, "--emit-trace", "--out", str(tmp_path)])
    assert code == EXIT_OK
    lines = (tmp_path / "sig_trace.csv").read_text().splitlines()[1:]
    back = np.array([[float(v) for v in ln.split(",")] for ln in lines])
    X = signature(load_path_csv(path), 2, p=2.5)
    # the written trace reads back bit for bit
    assert np.array_equal(back[:, 0], X.times) and np.array_equal(back[:, 1:], X.trace())
    assert np.abs(back[:, 1:] - np.array(pts)).max() <= 1e-15
    assert rep["signature"][1][0] == X.total().grade(1)[0]


def test_gnuplot_files(capsys, tmp_path, lpath):
    code, rep = _call(capsys, ["sig", lpath, "--emit-trace", "--emit-gnuplot", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert (tmp_path / "sig_trace.dat").exists()
    gp = (tmp_path / "sig_trace.gp").read_text()
    assert "sig_trace.dat" in gp and "using 1:2" in gp


def test_dumps_format():
    text = dumps({"b": [1.0, 0.1, float("nan")], "a": {"z": True, "y": None}})
    assert text.index('"a"') < text.index('"b"')
    assert "[1, 0.10000000000000001, null]" in text


# ---------------------------------------------------------------- integrate

def test_integrate_x_dx(capsys, tmp_path):
    t = np.linspace(0, 1, 101)
    path = _csv(tmp_path / "p.csv", t, t[:, None])
    code, rep = _call(capsys, ["integrate", path, '[["x1"]]', "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert rep["end"][0] == pytest.approx(0.5, abs=1e-12)
    assert (tmp_path / "integral.csv").exists()


def test_integrate_shape_mismatch(capsys, tmp_path, lpath):
    code, rep = _call(capsys, ["integrate", lpath, '[["x1"]]', "--out", str(tmp_path)])
    assert code == EXIT_VALIDATION and rep["error"]["kind"] == "validation"


# ---------------------------------------------------------------------- rde

def test_rde_zero_field_is_constant(capsys, tmp_path, lpath):
    code, rep = _call(capsys, ["rde", lpath, '[["0", "0"]]', "--y0", "0.25", "--out", str(tmp_path)])
    assert code == EXIT_OK
    lines = (tmp_path / "rde.csv").read_text().splitlines()[1:]
    assert {ln.split(",")[1] for ln in lines} == {"0.25"}
    assert rep["end"] == [0.25]


def test_rde_exponential(capsys, tmp_path):
    t = np.linspace(0, 1, 201)
    path = _csv(tmp_path / "t.csv", t, t[:, None])
    code, rep = _call(capsys, ["rde", path, '[["y1"]]', "--y0", "1", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert rep["end"][0] == pytest.approx(math.e, rel=1e-8)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_rde_blow_up_is_numeric(capsys, tmp_path):
    path = _csv(tmp_path / "b.csv", [0.0, 5.0, 10.0], [[0.0], [5.0], [10.0]])
    code, rep = _call(capsys, ["rde", path, '[["y1**2"]]', "--y0", "1", "--out", str(tmp_path)])
    assert code == EXIT_NUMERIC and rep["error"]["type"] == "NumericError"


# ------------------------------------------------------------ input errors

def test_empty_csv_is_parse_error(capsys, tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("")
    code, rep = _call(capsys, ["sig", str(path), "--out", str(tmp_path)])
    assert code == EXIT_PARSE and rep["error"]["kind"] == "parse"


def test_bad_number_reports_line(capsys, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,x1\n0,0\n1,oops\n")
    code, rep = _call(capsys, ["sig", str(path), "--out", str(tmp_path)])
    assert code == EXIT_PARSE and "line 3" in rep["error"]["message"]


def test_non_increasing_times(capsys, tmp_path):
    path = _csv(tmp_path / "n.csv", [0.0, 1.0, 1.0], [[0.0], [1.0], [2.0]])
    code, rep = _call(capsys, ["sig", path, "--out", str(tmp_path)])
    assert code == EXIT_VALIDATION


def test_gamma_below_p(capsys, tmp_path, lpath):
    code, rep = _call(capsys, ["sig", lpath, "--p", "3", "--gamma", "2", "--out", str(tmp_path)])
    assert code == EXIT_VALIDATION and "gamma" in rep["error"]["message"]


def test_bad_form_json(capsys, tmp_path, lpath):
    code, rep = _call(capsys, ["integrate", lpath, "[[", "--out", str(tmp_path)])
    assert code == EXIT_PARSE


def test_usage_error_exits_two(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rpmanifold.cli", "sig"], capture_output=True, text=True)
    assert proc.returncode == 2


def test_run_config_validation():
    with pytest.raises(ValidationError):
        RunConfig("sig", p=0.5).validate()
    assert run(RunConfig("sig", {"path": "/nonexistent.csv"}, out="."))[0] == EXIT_PARSE


# ------------------------------------------------------------ manifold-rde

def test_manifold_rde_rotates_response(capsys, tmp_path):
    (tmp_path / "circle.json").write_text(build_atlas("circle").to_json())
    t = np.linspace(0, 1, 401)
    th = 0.5 * math.pi * t
    sig = _csv(tmp_path / "quarter.csv", t, np.c_[np.cos(th), np.sin(th)])
    # the response turns with the signal: g(x, y) v = J y <J x, v>
    (tmp_path / "rot.json").write_text(json.dumps({"ambient": [["x2*y2", "-x1*y2"], ["-x2*y1", "x1*y1"]]}))
    code, rep = _call(capsys, ["manifold-rde", str(tmp_path / "circle.json"), sig, str(tmp_path / "rot.json"),
                               "--y0", "1,0", "--out", str(tmp_path)])
    assert code == EXIT_OK and rep["verify"]["ok"]
    assert np.allclose(rep["response_end"], [0.0, 1.0], atol=1e-9)
    assert (tmp_path / "manifold_rde_solution.json").exists()
    support = np.loadtxt(tmp_path / "manifold_rde_support.csv", delimiter=",", skiprows=1)
    assert np.allclose(np.hypot(support[:, 3], support[:, 4]), 1.0, atol=1e-9)


def test_manifold_rde_bad_atlas(capsys, tmp_path):
    (tmp_path / "a.json").write_text('{"manifold": {"kind": "moebius"}}')
    code, rep = _call(capsys, ["manifold-rde", str(tmp_path / "a.json"), "x.csv", "sphere-transport",
                               "--y0", "1,0,0", "--out", str(tmp_path)])
    assert code in (EXIT_PARSE, EXIT_VALIDATION)


# ------------------------------------------------------------------- check

def test_check_single_criterion(tmp_path, capsys):
    code, rep = _call(capsys, ["check", "--only", "2", "--out", str(tmp_path)])
    assert code == EXIT_OK and rep["passed"]
    assert [c["number"] for c in rep["criteria"]] == [2]
