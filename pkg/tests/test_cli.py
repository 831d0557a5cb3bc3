import json
import os
import subprocess
import sys

import numpy as np
import pytest

from coagfrag.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, SCHEMA_VERSION, main
from coagfrag.grid import SizeGrid, state_from_phi, write_state_csv

from test_config import MINIMAL


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(MINIMAL)
    return str(p)


def test_validate_builtin(capsys, tmp_path):
    assert main(["validate", "--config", "theorem12", "--out-dir", str(tmp_path)]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["schema_version"] == SCHEMA_VERSION
    assert payload["all_passed"] is True
    assert (tmp_path / "validation.json").exists()


def test_validate_failure_exit_code(capsys):
    assert main(["validate", "--config", "multiplicative"]) == EXIT_FAIL


def test_run_writes_outputs(tiny, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", tiny, "--out-dir", str(out)]) == EXIT_OK
    for name in ("snapshots.csv", "moments.csv", "ledger.csv", "summary.json"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema_version"] == SCHEMA_VERSION
    assert summary["m1_drift"] <= 1e-8
    assert summary["checks"] == {"completed": True, "mass_ledger": True, "positivity": True, "bound_respected": True}
    # the constant kernel has no k0, so explicit constants are unavailable
    assert summary["bounds"]["status"] == "unavailable"
    header = (out / "snapshots.csv").read_text().splitlines()[0]
    assert header == "t,cell,x_center,dx,phi"


def test_run_is_deterministic(tiny, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", tiny, "--out-dir", str(a)])
    main(["run", "--config", tiny, "--out-dir", str(b)])
    for name in ("snapshots.csv", "moments.csv", "ledger.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_run_sweep_uses_subdirectories(tiny, tmp_path, capsys):
    out = tmp_path / "sweep"
    assert main(["run", "--config", tiny, "--config", "zero", "--out-dir", str(out), "--jobs", "2"]) == EXIT_OK
    assert (out / "tiny" / "summary.json").exists() and (out / "zero" / "summary.json").exists()


def test_rejected_without_force(tmp_path, capsys):
    out = tmp_path / "mult"
    assert main(["run", "--config", "multiplicative", "--out-dir", str(out)]) == EXIT_FAIL
    payload = json.loads((out / "summary.json").read_text())
    assert payload["status"] == "rejected" and "--force" in payload["reason"]


def test_export_operators(tiny, tmp_path, capsys):
    out = tmp_path / "ops"
    main(["run", "--config", tiny, "--out-dir", str(out), "--export-operators"])
    assert sorted(p.name for p in (out / "operators").iterdir()) == ["L_diff.mtx", "L_frag.mtx"]


@pytest.mark.parametrize("argv", [
    ["run", "--config", "no_such_scenario"],
    ["validate", "--config", "theorem12", "--grid-refine", "0"],
    ["bounds", "--config", "theorem12", "--orders", "2.5"],
    ["bounds", "--config", "pure_coag"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_bounds_rejects_negative_state(tmp_path, capsys, theorem12):
    g = theorem12.config.grid
    path = tmp_path / "neg.csv"
    write_state_csv(path, state_from_phi(g, -np.ones(g.n)))
    assert main(["bounds", "--config", "theorem12", "--state", str(path)]) == EXIT_USAGE


def test_bounds_on_zero_state(tmp_path, capsys, theorem12):
    g = theorem12.config.grid
    path = tmp_path / "zero.csv"
    write_state_csv(path, state_from_phi(g, np.zeros(g.n)))
    assert main(["bounds", "--config", "theorem12", "--state", str(path)]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["all_passed"] and payload["n_states"] == 1


def test_bounds_sweep(tmp_path, capsys):
    out = tmp_path / "b"
    assert main(["bounds", "--config", "theorem12", "--sweep", "5", "--seed", "3", "--out-dir", str(out)]) == EXIT_OK
    payload = json.loads((out / "bounds.json").read_text())
    assert payload["seed"] == 3 and payload["n_states"] == 5
    assert payload["orders"] == [1.5, 2.0]
    assert all(row["passed"] for row in payload["delta_range"])


def test_scenarios_listing(capsys):
    assert main(["scenarios"]) == EXIT_OK
    assert "theorem12_m3" in capsys.readouterr().out


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "coagfrag", "--version"], capture_output=True, text=True,
                         env=dict(os.environ))
    assert out.returncode == 0 and out.stdout.startswith("coagfrag ")
