import csv
import json
import subprocess
import sys

import pytest

from tollcast import fixture_path
from tollcast.cli import run


def call(capsys, *argv):
    code = run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 and out else None), err


def test_equilibrium_braess(capsys):
    code, out, _ = call(capsys, "equilibrium", "--lambda", "1", fixture_path("braess"))
    assert code == 0
    assert out["G"] == {"co2": "8"}
    assert out["min_path_cost"] == {"0": "17/4"}
    assert out["flow"]["0"] == {"sv": "2", "vw": "2", "wt": "2"}


def test_equilibrium_lambda_j(capsys):
    code, out, _ = call(capsys, "equilibrium", "--lambda-j", "co2=1/2", fixture_path("two-class"))
    assert code == 0
    assert out["lambda"] == {"co2": "1/2", "nox": "0"}
    assert out["edge_loads"] == {"e1": "1/4", "e2": "3/4"}
    code, _, err = call(capsys, "equilibrium", "--lambda-j", "so2=1", fixture_path("two-class"))
    assert code == 2 and "so2" in err


def test_min_price_pigou(capsys):
    code, out, _ = call(capsys, "min-price", "--budget", "1/2", fixture_path("pigou"))
    assert code == 0
    assert out["lambda"] == "1"
    assert out["iterations"] <= out["bound"]


def test_validate_reports_field_path(capsys):
    code, _, err = call(capsys, "validate", fixture_path("bad-breakpoints"))
    assert code == 2
    assert "edges[0].pieces[2].breakpoint" in err


def test_validate_ok(capsys):
    code, out, _ = call(capsys, "validate", fixture_path("braess"))
    assert code == 0 and out["valid"] and out["affine_externality"]


def test_missing_file(capsys, tmp_path):
    code, _, err = call(capsys, "validate", tmp_path / "nope.json")
    assert code == 2 and "error" in err


def test_malformed_json(capsys, tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{ nodes: ")
    code, _, _ = call(capsys, "validate", p)
    assert code == 2


def test_unsupported_curve_on_affine(capsys):
    code, _, err = call(capsys, "curve", fixture_path("braess"))
    assert code == 4 and "unsupported" in err


def test_infeasible_budget(capsys):
    code, _, err = call(capsys, "implement-budget", "--budget", "co2=0,nox=0", fixture_path("two-class"))
    assert code == 3
    assert "certificate" in err and "budget[" in err


def test_implement_budget(capsys):
    code, out, _ = call(capsys, "implement-budget", "--budget", "co2=1/4,nox=1", fixture_path("two-class"))
    assert code == 0
    assert out["lambda"] == {"co2": "1/2", "nox": "0"}
    assert set(out["kkt"].values()) == {"0"}
    code, out, _ = call(capsys, "implement-budget", "--budget", "1/2", fixture_path("pigou"))
    assert code == 0 and out["lambda"] == {"co2": "1"}


def test_min_budget_and_credit_scheme(capsys):
    code, out, _ = call(capsys, "min-budget", fixture_path("pigou"))
    assert code == 0 and out["B_min"] == {"co2": "0"}
    code, out, _ = call(capsys, "credit-scheme", "--credits", "0", fixture_path("pigou"))
    assert code == 0
    assert out["lambda_lo"] == "2" and out["lambda_hi"] is None and not out["bounded"]
    code, out, _ = call(capsys, "credit-scheme", "--credits", "1/2", fixture_path("pigou"))
    assert (out["lambda_lo"], out["lambda_hi"]) == ("1", "1")


def test_round_trip_equilibrium_to_check_flow(capsys, tmp_path):
    for name, lam in [("pigou", "1"), ("braess", "1"), ("two-commodity", "5/2"), ("fig1", "1")]:
        flow_file = tmp_path / f"{name}.json"
        code = run(["--out", str(flow_file), "equilibrium", "--lambda", lam, str(fixture_path(name))])
        assert code == 0
        capsys.readouterr()
        code, out, _ = call(capsys, "check-flow", "--flow", flow_file, fixture_path(name))
        assert code == 0 and out["implementable"] and out["gap"] == "0"


def test_check_flow_not_implementable(capsys, tmp_path):
    p = tmp_path / "flow.json"
    p.write_text(json.dumps({"flow": {"0": {"e2": "1"}}}))
    code, out, _ = call(capsys, "check-flow", "--flow", p, fixture_path("fig1-zero-g"))
    assert code == 0 and not out["implementable"] and out["gap"] == "1"


def test_bad_flow_file(capsys, tmp_path):
    p = tmp_path / "flow.json"
    p.write_text(json.dumps({"flow": {"0": {"e1": "1/2"}}}))
    code, _, _ = call(capsys, "check-flow", "--flow", p, fixture_path("pigou"))
    assert code == 2


def test_decimal_mirror(capsys):
    code, out, _ = call(capsys, "--decimal", "3", "equilibrium", "--lambda", "1", fixture_path("pigou"))
    assert code == 0
    assert out["edge_loads"]["e1"] == "1/2"
    assert out["decimal"]["edge_loads"]["e1"] == "0.500"


def test_curve_csv_and_svg(capsys, tmp_path):
    pytest.importorskip("matplotlib")
    c, s = tmp_path / "c.csv", tmp_path / "c.svg"
    code, out, _ = call(capsys, "curve", "--grid", "5", "--csv", c, "--svg", s, fixture_path("pigou"))
    assert code == 0
    assert [b["lambda"] for b in out["breakpoints"]] == ["0", "2"]
    rows = list(csv.reader(c.open()))
    assert rows[0] == ["lambda", "e1", "e2", "G", "Phi"]
    assert [r[0] for r in rows[1:]] == ["0", "3/4", "3/2", "2", "9/4", "3"]
    assert s.read_text().lstrip().startswith("<?xml")


def test_curve_zero_slope_warns(capsys):
    code, out, err = call(capsys, "curve", fixture_path("fig1"))
    assert code == 0 and out["perturbed"] and "warning" in err


def _bytes(tmp_path, tag, argv):
    out = tmp_path / f"{tag}.json"
    assert run(["-q", "--out", str(out), *argv]) == 0
    return out.read_bytes()


@pytest.mark.parametrize(
    "argv",
    [
        ["equilibrium", "--lambda", "1/10", str(fixture_path("braess"))],
        ["curve", str(fixture_path("two-commodity"))],
        ["min-price", "--budget", "0", str(fixture_path("fig1-perturbed"))],
        ["credit-scheme", "--credits", "1/2", str(fixture_path("pigou"))],
    ],
)
def test_byte_identical_output(tmp_path, argv):
    assert _bytes(tmp_path, "a", argv) == _bytes(tmp_path, "b", argv)


def test_svg_is_byte_identical(tmp_path):
    pytest.importorskip("matplotlib")
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    for p in (a, b):
        assert run(["-q", "curve", "--grid", "9", "--svg", str(p), str(fixture_path("pigou"))]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_module_entry_point_and_verbose_trace():
    proc = subprocess.run(
        [sys.executable, "-m", "tollcast", "-q", "min-budget", str(fixture_path("pigou"))],
        capture_output=True,
        text=True,
        env={"TOLLCAST_VERBOSE": "1", "PATH": ""},
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout) == {"B_min": {"co2": "0"}}
    assert "tollcast.lp" in proc.stderr
