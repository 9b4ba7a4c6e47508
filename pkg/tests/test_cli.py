from __future__ import annotations

import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from thinfilm import cli

CONFIGS = Path(__file__).resolve().parents[1] / "docs" / "examples" / "configs"


def _run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def _json_without_timestamp(text: str) -> dict:
    data = json.loads(text)
    assert data.pop("timestamp")
    return data


# --- classify -----------------------------------------------------------------

@pytest.mark.parametrize("spec,count", [("power:m=3", 4), ("arbitrary", 3), ("explicit:u*e^(-u)", 3),
                                        ("exp:lambda=2", 4)])
def test_classify_counts(spec, count, capsys):
    code, out, _ = _run(["classify", spec, "--json", "-"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["outcome"] == "pass" and len(rep["details"]["generators"]) == count
    assert all(r == "0" for r in rep["details"]["invariance_residuals"].values())


def test_classify_text_output(capsys):
    code, out, _ = _run(["classify", "power:m=3"], capsys)
    assert code == 0 and "Q3" in out and "commutators:" in out


@pytest.mark.parametrize("spec", ["power:m=0", "exp:lambda=0", "cubic", "explicit:x*u"])
def test_classify_inadmissible(spec, capsys):
    code, _, err = _run(["classify", spec], capsys)
    assert code == 2 and err.startswith("error:")


# --- verify ---------------------------------------------------------------------

def test_verify_symmetries_all(capsys):
    code, out, _ = _run(["verify", "symmetries", "--json", "-"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["outcome"] == "pass"
    kinds = [c["kind"] for c in rep["details"]["checks"]]
    assert kinds.count("generator") == 11 and kinds.count("non-symmetry") == 3 and kinds.count("equivalence") == 6


def test_verify_reductions_power(capsys, tmp_path):
    code, out, _ = _run(["verify", "reductions", "--case", "power", "--csv-dir", str(tmp_path)], capsys)
    assert code == 0 and "7/7 pass" in out
    rows = list(csv.reader((tmp_path / "verify_reductions.csv").open()))
    assert rows[0] == ["id", "params", "max_residual", "n_points", "pass"] and len(rows) == 8


def test_verify_solutions(capsys):
    code, out, _ = _run(["verify", "solutions"], capsys)
    assert code == 0 and "11/11 pass" in out


def test_verify_chains(capsys):
    code, out, _ = _run(["verify", "chains", "--json", "-"], capsys)
    rep = json.loads(out)
    assert code == 0
    ids = [c["id"] for c in rep["details"]["checks"]]
    assert {"source-fourth", "tw-fourth-exp", "tw-fourth-power", "power-third", "uexp-third"} <= set(ids)


def test_verify_failure_exit_code(capsys):
    # a negative tolerance makes every sampled or symbolic check fail
    code, _, _ = _run(["verify", "solutions", "--case", "arbitrary", "--tol", "-1"], capsys)
    assert code == 1


# --- determinism and seeds -----------------------------------------------------

def test_reports_identical_modulo_timestamp(capsys):
    _, a, _ = _run(["verify", "reductions", "--case", "exponential", "--json", "-"], capsys)
    _, b, _ = _run(["verify", "reductions", "--case", "exponential", "--json", "-"], capsys)
    assert _json_without_timestamp(a) == _json_without_timestamp(b)
    text_a = json.dumps(_json_without_timestamp(a), sort_keys=True)
    text_b = json.dumps(_json_without_timestamp(b), sort_keys=True)
    assert text_a == text_b


def test_seed_env_override(capsys, monkeypatch):
    monkeypatch.setenv("THINFILM_SEED", "7")
    _, out, _ = _run(["classify", "arbitrary", "--json", "-"], capsys)
    assert json.loads(out)["seed"] == 7
    _, out, _ = _run(["classify", "arbitrary", "--json", "-", "--seed", "3"], capsys)
    assert json.loads(out)["seed"] == 3
    monkeypatch.delenv("THINFILM_SEED")
    _, out, _ = _run(["classify", "arbitrary", "--json", "-"], capsys)
    assert json.loads(out)["seed"] == 42


def test_report_json_file(tmp_path, capsys):
    path = tmp_path / "rep.json"
    code, _, _ = _run(["classify", "arbitrary", "--json", str(path)], capsys)
    rep = json.loads(path.read_text())
    assert code == 0 and rep["command"] == "classify" and rep["version"]


# --- simulate -------------------------------------------------------------------

@pytest.mark.parametrize("name", ["blowup_convergence", "periodic_mass", "waiting_time"])
def test_simulate_example_configs(name, tmp_path, capsys):
    code, out, _ = _run(["simulate", str(CONFIGS / f"{name}.json"), "--csv-dir", str(tmp_path), "--json", "-"],
                        capsys)
    rep = json.loads(out)
    assert code == 0 and rep["outcome"] == "pass" and rep["details"]["checks"]
    assert (tmp_path / f"{name}_series.csv").exists() and (tmp_path / f"{name}_final.csv").exists()


def test_simulate_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"steps": 10, "sigma": 0.5}))
    code, _, err = _run(["simulate", str(path)], capsys)
    assert code == 2 and "sigma" in err


# --- catalog and solution --------------------------------------------------------

@pytest.mark.parametrize("kind", ["reductions", "symmetries", "chains"])
def test_catalog(kind, capsys):
    code, out, _ = _run(["catalog", kind], capsys)
    assert code == 0 and json.loads(out)


def test_solution_csv(tmp_path, capsys):
    path = tmp_path / "u.csv"
    code, _, _ = _run(["solution", "blowup_exp", "--param", "lambda=1", "--param", "x0=0", "--t", "0",
                       "--x-min", "0.5", "--x-max", "1", "--n", "6", "--csv", str(path)], capsys)
    rows = list(csv.reader(path.open()))
    assert code == 0 and rows[0] == ["x", "u", "in_domain"] and len(rows) == 7
    assert float(rows[1][1]) == pytest.approx(-9.128696, abs=1e-6)


def test_solution_list_param(capsys):
    code, out, _ = _run(["solution", "rational_tw_m1", "--param", "alpha=2", "--param", "c=1;0;0;0;0",
                         "--x-min", "0", "--x-max", "1", "--n", "3"], capsys)
    rows = list(csv.reader(out.strip().splitlines()))
    assert code == 0 and float(rows[-1][1]) == pytest.approx(1 - 1 / 60)


def test_solution_inadmissible(capsys):
    code, _, err = _run(["solution", "waiting_time_power", "--param", "m=2"], capsys)
    assert code == 2 and "m" in err


@pytest.mark.skipif(shutil.which("thinfilm") is None, reason="console script not installed")
def test_console_script():
    proc = subprocess.run(["thinfilm", "classify", "power:m=0"], capture_output=True, text=True)
    assert proc.returncode == 2
    proc = subprocess.run([sys.executable, "-m", "thinfilm.cli", "classify", "arbitrary"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
