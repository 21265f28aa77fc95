from __future__ import annotations

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from gcb_lab.cli import main
from gcb_lab.ensemble_io import read_ensemble


def test_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert "coupling-gl" in out and "faible_descente" in out
    assert main(["list", "--format", "json"]) == 0
    assert len(json.loads(capsys.readouterr().out)) >= 8


def test_verify_pass_writes_reports(tmp_path):
    code = main(["verify", "--config", "brownian", "--paths", "3000", "--seed", "4",
                 "--out", str(tmp_path), "--format", "json", "--format", "csv", "--format", "md"])
    assert code == 0
    rep = json.loads((tmp_path / "brownian.json").read_text())
    assert rep["experiment"]["seed"] == 4 and rep["experiment"]["n_paths"] == 3000
    rows = list(csv.DictReader(open(tmp_path / "brownian.csv")))
    assert [r["verdict"] for r in rows] == ["PASS"] * 3
    assert (tmp_path / "brownian.md").exists()


def test_verify_inconclusive_exit_code():
    assert main(["verify", "--config", "heavytail", "--paths", "200", "--dt", "1e-5"]) == 2


def test_verify_fail_exit_code(tmp_path):
    cfg = tmp_path / "f.toml"
    cfg.write_text("""
[experiment]
id = "fails"
[model]
id = "ou1d"
params = { kappa = 1.0, sigma = 2.0 }
[init]
law = "point"
x0 = 0.0
[grid]
t1 = 1.0
dt = 0.01
[run]
n_paths = 2000
[bound]
theorem = "ou"
params = { d0 = 0.01, sigma = 0.2 }
""")
    assert main(["verify", "--config", str(cfg)]) == 1


def test_usage_and_config_errors(tmp_path, capsys):
    assert main(["verify", "--config", "ou", "--paths", "-1"]) == 3
    assert "run.n_paths" in capsys.readouterr().err
    assert main(["verify", "--config", str(tmp_path / "missing.toml")]) == 3
    with pytest.raises(SystemExit) as info:
        main(["verify"])
    assert info.value.code == 3
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 3


def test_bounds_csv_and_sidecar(tmp_path):
    out = tmp_path / "ou.csv"
    assert main(["bounds", "--theorem", "ou", "--params", "d0=2,kappa=1,sigma=1.4142135623730951",
                 "--t-grid", "0:4:5", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 5
    for r in rows:
        t = float(r["t"])
        assert float(r["D"]) == pytest.approx(0.5 + 1.5 * np.exp(-2 * t), rel=1e-12)
    side = json.loads(out.with_suffix(".json").read_text())
    assert side["theorem"] == "ou" and side["inputs"]["d0"] == 2.0


def test_bounds_from_param_file_and_config(tmp_path, capsys):
    pf = tmp_path / "p.toml"
    pf.write_text("alpha_exp = 0.25\ny_star = 2.0\n")
    assert main(["bounds", "--theorem", "descente", "--params", str(pf), "--t-grid", "0:1:3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "t,D,log_D" and lines[1].startswith("0.0,,")
    assert main(["bounds", "--config", "gradient-bound", "--t-grid", "0:1:2"]) == 0
    assert main(["bounds", "--theorem", "ou", "--params", "d0=1"]) == 3
    assert main(["bounds", "--theorem", "ou", "--params", "d0=1,kappa=1,sigma=1",
                 "--t-grid", "bad"]) == 3


def test_simulate_and_estimate(tmp_path, capsys):
    out = tmp_path / "ens.bin"
    assert main(["simulate", "--config", "ou", "--paths", "500", "--dt", "0.01",
                 "--out", str(out)]) == 0
    files = sorted(tmp_path.glob("ens_t*.bin"))
    assert [f.name for f in files] == ["ens_t0.25.bin", "ens_t1.bin", "ens_t4.bin"]
    ens = read_ensemble(files[-1])
    assert ens.n_paths == 500 and ens.time == 4.0
    assert main(["estimate", "--ensemble", str(files[-1]), "--estimator", "gcb"]) == 0
    est = json.loads(capsys.readouterr().out)
    assert est["estimator"] == "gcb" and est["n"] == 500
    assert main(["estimate", "--ensemble", str(files[-1]), "--estimator", "exp_square"]) == 3
    csv_out = tmp_path / "one.csv"
    assert main(["simulate", "--config", "brownian", "--paths", "50", "--out", str(csv_out),
                 "--format", "csv"]) == 0
    assert (tmp_path / "one_t2.csv").exists()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "gcb_lab", "list"], capture_output=True, text=True)
    assert res.returncode == 0 and "ou" in res.stdout
