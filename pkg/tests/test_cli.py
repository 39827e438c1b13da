import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from conftest import SCENARIOS
from vickrey_due.cli import (EXIT_LOADING, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_SCENARIO, EXIT_VALIDATION, main,
                             run_checks)
from vickrey_due.scenario import ScenarioError, load_scenario, parse_scenario


def raw(name):
    return json.loads((SCENARIOS / f"{name}.json").read_text())


def write(tmp_path, doc, name="sc.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return p


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestScenario:
    def test_stock_scenarios_parse(self):
        for p in SCENARIOS.glob("*.json"):
            sc = load_scenario(p)
            assert sc.horizon_end >= sc.tf

    def test_collects_errors(self):
        doc = raw("bottleneck")
        doc["schema_version"] = 7
        doc["colour"] = "red"
        doc["arcs"][0]["capacity"] = -1
        doc["solver"] = {"tol": 0, "speed": 3}
        with pytest.raises(ScenarioError) as info:
            parse_scenario(doc)
        msg = str(info.value)
        for needle in ("schema_version", "colour", "capacity", "solver.tol", "solver.speed"):
            assert needle in msg

    def test_path_flows(self):
        doc = raw("rectangle")
        doc["path_flows"] = {"P1": [1, 1, 1]}
        with pytest.raises(ScenarioError, match="power of two"):
            parse_scenario(doc)
        doc["path_flows"] = {"P9": [1, 1]}
        with pytest.raises(ScenarioError, match="P9"):
            parse_scenario(doc)

    def test_horizon(self):
        doc = raw("bottleneck")
        doc["horizon"] = {"t0": 3, "tf": 3}
        with pytest.raises(ScenarioError, match="tf must exceed t0"):
            parse_scenario(doc)
        doc["horizon"] = {"t0": 0, "tf": 8, "horizon_end": 5}
        with pytest.raises(ScenarioError, match="precedes"):
            parse_scenario(doc)


class TestExitCodes:
    def test_schema_error(self, tmp_path, capsys):
        doc = raw("bottleneck")
        doc["arcs"][0]["free_flow_time"] = 0
        assert main(["solve", str(write(tmp_path, doc)), "--out", str(tmp_path / "o")]) == EXIT_SCENARIO
        assert "free_flow_time" in capsys.readouterr().err

    def test_malformed_json(self, tmp_path, capsys):
        p = write(tmp_path, '{\n  "schema_version": 1,\n  "arcs": [,]\n}')
        assert main(["validate", str(p)]) == EXIT_SCENARIO
        assert "line 3" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["validate", str(tmp_path / "nope.json")]) == EXIT_SCENARIO

    def test_out_required(self):
        assert main(["solve", str(SCENARIOS / "bottleneck.json")]) == EXIT_SCENARIO

    def test_loading_error(self, tmp_path, capsys):
        doc = {
            "schema_version": 1,
            "horizon": {"t0": 0, "tf": 1, "horizon_end": 5},
            "arcs": [{"id": "a", "tail": "o", "head": "m", "capacity": 10, "free_flow_time": 0.5},
                     {"id": "b", "tail": "m", "head": "d", "capacity": 0.1, "free_flow_time": 0.5}],
            "paths": [{"id": "P", "arcs": ["a", "b"]}],
            "od_pairs": [{"origin": "o", "destination": "d", "demand": 2, "paths": ["P"]}],
            "path_flows": {"P": [2, 2]},
        }
        assert main(["load", str(write(tmp_path, doc)), "--out", str(tmp_path / "o")]) == EXIT_LOADING
        assert "too short" in capsys.readouterr().err

    def test_not_converged(self, tmp_path):
        out = tmp_path / "o"
        code = main(["solve", str(SCENARIOS / "bottleneck.json"), "--out", str(out), "--max-iter", "1"])
        assert code == EXIT_NOT_CONVERGED
        assert json.loads((out / "report.json").read_text())["converged"] is False

    def test_validation_failure(self, tmp_path, capsys):
        doc = raw("bottleneck")
        # F' = 2 * 0.25 * (1 - 4) = -1.5 at the earliest possible arrival
        doc["penalty"] = {"kind": "quadratic", "coef": 0.25, "target_arrival": 4}
        assert main(["validate", str(write(tmp_path, doc))]) == EXIT_VALIDATION
        out = capsys.readouterr().out
        assert "FAIL  arrival slope" in out and "measured=-0.5" in out

    def test_validate_stock(self, capsys):
        for p in sorted(SCENARIOS.glob("*.json")):
            assert main(["validate", str(p)]) == EXIT_OK, p.name
        lines = capsys.readouterr().out.splitlines()
        assert lines and all(line.startswith("PASS") for line in lines)


def test_rectangle_load(tmp_path):
    out = tmp_path / "o"
    assert main(["load", str(SCENARIOS / "rectangle.json"), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "path_P1_delay.csv")
    pts = np.array(rows[1:], dtype=float)
    assert np.allclose(pts[:2], [[0, 1], [1, 2]], atol=1e-12)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["paths"]["P1"]["max_delay"] == pytest.approx(2.0)
    assert summary["paths"]["P1"]["within_bound"] is True
    assert (out / "path_P1_psi.csv").exists() and (out / "arc_a_q.csv").exists()


def test_load_needs_flows(tmp_path, capsys):
    assert main(["load", str(SCENARIOS / "bottleneck.json"), "--out", str(tmp_path)]) == EXIT_SCENARIO
    assert "path_flows" in capsys.readouterr().err


def test_solve_outputs_are_deterministic(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["solve", str(SCENARIOS / "bottleneck.json"), "--out", str(out), "--grid-level", "4"]) == EXIT_OK
        outs.append(out)
    for name in ("report.json", "gap_history.csv", "flows.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    report = json.loads((outs[0] / "report.json").read_text())
    assert report["verification"]["passed"] and report["grid_level"] == 4
    hist = read_csv(outs[0] / "gap_history.csv")
    assert hist[0] == ["iter", "abs_gap", "rel_gap"] and len(hist) == report["iterations"] + 1
    flows = read_csv(outs[0] / "flows.csv")
    assert flows[0] == ["path", "cell_start", "rate"] and len(flows) == 17


def test_diamond_solve_is_symmetric(tmp_path):
    out = tmp_path / "o"
    assert main(["solve", str(SCENARIOS / "diamond.json"), "--out", str(out), "--grid-level", "3",
                 "--tol", "1e-6"]) == EXIT_OK
    flows = json.loads((out / "report.json").read_text())["flows"]
    assert np.max(np.abs(np.subtract(flows["P1"], flows["P2"]))) <= 1e-6


def test_run_checks_seeded(bottleneck):
    a = run_checks(bottleneck, seed=3, level=3)
    b = run_checks(bottleneck, seed=3, level=3)
    assert [c.value for c in a] == [c.value for c in b]
    assert [c.name for c in a] == ["arrival slope", "FIFO", "conservation", "delay bound", "continuity probe"]


@pytest.mark.skipif(shutil.which("vickrey-due") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["vickrey-due", "validate", str(SCENARIOS / "rectangle.json")],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "PASS" in proc.stdout


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "vickrey_due.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "load" in proc.stdout
