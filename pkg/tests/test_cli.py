import json

import pytest

from oracles import PROBLEMS
from skembed.cli import main


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, json.loads(out.out) if out.out.strip() else None, out.err


def test_check_ordered(capsys):
    code, rep, _ = _run(capsys, "check", PROBLEMS / "g5.json")
    assert code == 0
    assert rep["ordered"] and rep["submartingale"]["passed"]


def test_check_reversed_gives_certificate(capsys):
    code, rep, _ = _run(capsys, "check", PROBLEMS / "g5_reversed.json")
    assert code == 2
    assert not rep["ordered"]
    assert rep["certificate_margin"] > 0


def test_malformed_kernel(capsys):
    code, rep, err = _run(capsys, "solve", PROBLEMS / "malformed.json")
    assert code == 1
    assert rep["error"] == "RowSumExceedsOne"
    assert "RowSumExceedsOne" in err


def test_missing_file(capsys):
    code, rep, _ = _run(capsys, "solve", PROBLEMS / "does_not_exist.json")
    assert code == 1


def test_solve_walk(capsys):
    code, rep, _ = _run(capsys, "solve", PROBLEMS / "g5.json", "--method", "both")
    assert code == 0
    assert rep["objective"] == pytest.approx(4.0)
    assert abs(rep["gap"]) <= 1e-8
    assert rep["verification"]["passed"]
    assert rep["stop_go"]["passed"]


def test_negative_contact_tolerance_fails_verification(capsys):
    code, rep, _ = _run(capsys, "solve", PROBLEMS / "g5.json", "--ctol", "-1")
    assert code == 3


def test_root_plot(tmp_path, capsys):
    svg = tmp_path / "root.svg"
    code, rep, _ = _run(capsys, "solve", PROBLEMS / "root.json", "--plot", svg)
    assert code == 0
    assert rep["objective"] == pytest.approx(1.0)
    text = svg.read_text()
    assert text.startswith("<svg") and text.rstrip().endswith("</svg>")


def test_plot_needs_single_problem(tmp_path, capsys):
    code = main(["solve", str(PROBLEMS / "g5.json"), str(PROBLEMS / "root.json"), "--plot", str(tmp_path / "x.svg")])
    assert code == 1


def test_ergodic_cycle(capsys):
    code, rep, _ = _run(capsys, "ergodic", PROBLEMS / "cycle3.json")
    assert code == 0
    assert rep["methods_agree"]


def test_report_round_trip(tmp_path, capsys):
    out = tmp_path / "rep.json"
    assert main(["solve", str(PROBLEMS / "g5.json"), "--out", str(out)]) == 0
    capsys.readouterr()
    code, rep, _ = _run(capsys, "report", PROBLEMS / "g5.json", "--from", out)
    assert code == 0


def test_simulate_is_reproducible(tmp_path, capsys):
    args = ("simulate", PROBLEMS / "g5.json", "--n-paths", "2000", "--seed", "5")
    code1, rep1, _ = _run(capsys, *args)
    code2, rep2, _ = _run(capsys, *args)
    assert code1 == code2 == 0
    assert rep1["simulation"] == rep2["simulation"]


def test_batch_returns_worst_code(capsys):
    code = main([str(a) for a in ("check", PROBLEMS / "g5.json", PROBLEMS / "g5_reversed.json")])
    reps = json.loads(capsys.readouterr().out)
    assert code == 2
    assert [r["exit_code"] for r in reps] == [0, 2]


def _write_equal_laws(tmp_path, name):
    d = json.loads((PROBLEMS / f"{name}.json").read_text())
    d["nu"] = d["mu"]
    path = tmp_path / f"{name}_equal.json"
    path.write_text(json.dumps(d))
    return path


def test_solve_equal_laws_stops_at_once(tmp_path, capsys):
    code, rep, _ = _run(capsys, "solve", _write_equal_laws(tmp_path, "g5"))
    assert code == 0
    assert rep["objective"] == pytest.approx(0.0)
    p = rep["stopping_rule"]["p"] if isinstance(rep["stopping_rule"], dict) else rep["stopping_rule"]
    assert all(v == pytest.approx(1.0) for v in p)


def test_ergodic_equal_laws(tmp_path, capsys):
    code, rep, _ = _run(capsys, "ergodic", _write_equal_laws(tmp_path, "cycle3"))
    assert code == 0
    assert rep["value"] == pytest.approx(0.0, abs=1e-12)
