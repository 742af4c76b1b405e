import csv
import json
import subprocess
import sys

import pytest

from crossform.cli import main
from crossform.sweep import resolve_scenario


def test_run_writes_outputs(tmp_path):
    code = main(["run", "case1_implicit", "--t-end", "0.05", "--out", str(tmp_path)])
    assert code == 0
    out = tmp_path / "case1_implicit"
    assert (out / "records.csv").is_file() and (out / "summary.json").is_file()
    assert json.loads((out / "summary.json").read_text())["status"] == "ok"


def test_run_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["run", "case1_implicit", "--t-end", "3.02", "--out", str(tmp_path / d)]) == 0
    a = (tmp_path / "a" / "case1_implicit" / "records.csv").read_bytes()
    b = (tmp_path / "b" / "case1_implicit" / "records.csv").read_bytes()
    assert a == b


def test_unknown_key_exits_with_config_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(open(resolve_scenario("case1_implicit")).read() + "foo: 1\n")
    assert main(["run", str(bad), "--out", str(tmp_path)]) == 2
    assert "foo" in capsys.readouterr().err


def test_missing_file_exits_with_config_code(tmp_path):
    assert main(["run", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == 2


def test_infeasible_setpoint_exits_with_no_operating_point(tmp_path):
    text = open(resolve_scenario("case1_implicit")).read().replace("p_star: 0.2", "p_star: 20.0")
    bad = tmp_path / "infeasible.yaml"
    bad.write_text(text)
    assert main(["run", str(bad), "--out", str(tmp_path)]) == 4


def test_sweep_empty_grid(tmp_path):
    code = main(["sweep", "case2_cross_forming", "--param", "events[0].p_star_fault=", "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.reader(open(tmp_path / "sweep.csv", newline="")))
    assert len(rows) == 1


def test_sweep_grid_rows(tmp_path):
    code = main(["sweep", "case1_implicit", "--param", "inverters[0].forming.p_star=0.1,0.2", "--t-end", "0.02", "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv", newline="")))
    assert [r["inverters[0].forming.p_star"] for r in rows] == ["0.1", "0.2"]
    assert all(r["status"] == "ok" for r in rows)


def test_analyze_tools(tmp_path):
    assert main(["analyze", "power-angle", "--v-g", "0.5", "--x-v", "0.2", "--x-g", "0.1", "--out", str(tmp_path)]) == 0
    rows = list(csv.reader(open(tmp_path / "power_angle.csv", newline="")))
    assert len(rows) == 362
    assert main(["analyze", "equal-area", "--pre", "1.8", "--fault", "0.4", "--post", "1.4", "--p-star", "0.5", "--out", str(tmp_path)]) == 0
    ea = json.loads((tmp_path / "equal_area.json").read_text())
    assert ea["critical_time"] == pytest.approx(0.4423, abs=1e-3)
    assert main(["analyze", "dvoc", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "dvoc_condition.json").is_file()


def test_limiters_suite(tmp_path):
    assert main(["limiters", "--fast", "--quiet", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "limiters.json").read_text())
    assert report["failures"] == 0 and all(r["passed"] for r in report["results"])
    assert {r["module"] for r in report["results"]} == {"current_limiting"}


def test_verify_filter(tmp_path):
    assert main(["verify", "phasor_core", "--quiet", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "verify.json").read_text())["failures"] == 0
    assert main(["verify", "no_such_property", "--quiet", "--out", str(tmp_path)]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "crossform", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "verify" in proc.stdout
