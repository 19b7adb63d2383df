import csv
import json
import subprocess
import sys

import pytest

from ppfl import cli

SMALL = """[experiment]
n_clients = 2
n_rounds = 2
dim = 2
points_per_client = 6
n_replicas = 8
n_candidates = 3

[toy]
noise_ratios = 0.01, 1
n_grid = 401
"""


def _write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_zero_rounds_writes_empty_reports(tmp_path):
    cfg = _write(tmp_path, "[experiment]\nn_rounds = 0\n")
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    assert _rows(out / "rounds.csv") == [list(cli.ROUNDS_HEADER)]
    assert _rows(out / "bounds.csv") == [list(cli.BOUNDS_HEADER)]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["incomplete"] is False


def test_minimal_config_runs(tmp_path):
    cfg = _write(tmp_path, "[experiment]\nn_clients = 1\nn_rounds = 1\ndim = 1\n")
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) in (0, 1)
    assert len(_rows(out / "rounds.csv")) == 2


def test_simulate_manifest_and_rows(tmp_path):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "out"
    code = cli.main(["simulate", "--config", cfg, "--out", str(out), "--seed", "5"])
    assert code in (0, 1)
    rows = _rows(out / "rounds.csv")
    assert rows[0] == list(cli.ROUNDS_HEADER) and len(rows) == 1 + 2 * 2
    m = json.loads((out / "manifest.json").read_text())
    assert {"config_sha256", "resolved_config", "artifacts", "status", "constants"} <= set(m)
    assert "master_seed = 5" in m["resolved_config"]
    assert set(m["artifacts"]) == {"rounds.csv", "bounds.csv"}
    statuses = {r[-1] for r in _rows(out / "bounds.csv")[1:]}
    assert statuses <= {"pass", "fail", "out-of-regime"}
    assert code == (1 if "fail" in statuses else 0)


def test_floats_use_17_significant_digits():
    assert cli.fmt(0.1) == "0.10000000000000001"
    assert float(cli.fmt(1 / 3)) == 1 / 3
    assert cli.fmt(float("nan")) == "nan" and cli.fmt(-float("inf")) == "-inf" and cli.fmt(3) == "3"


def test_verify_bounds_is_byte_identical(tmp_path):
    cfg = _write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        cli.main(["verify-bounds", "--config", cfg, "--out", str(out)])
    for name in ("rounds.csv", "bounds.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    names = [r[0] for r in _rows(a / "bounds.csv")[1:]]
    assert any(n.startswith("toy.") for n in names) and any(not n.startswith("toy.") for n in names)


@pytest.mark.parametrize("param", ["noise", "budget"])
def test_sweep_has_one_row_per_level(tmp_path, param):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / param
    grid = "0.0001,0.001,0.002,0.005,0.009"
    assert cli.main(["sweep", "--config", cfg, "--param", param, "--grid", grid, "--out", str(out)]) == 0
    rows = _rows(out / "sweep.csv")
    assert rows[0] == list(cli.SWEEP_HEADER) and len(rows) == 6
    tv = [float(r[3]) for r in rows[1:]]
    assert tv == sorted(tv)


def test_config_errors_exit_2(tmp_path, capsys):
    out = str(tmp_path / "out")
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.ini"), "--out", out]) == 2
    bad = _write(tmp_path, "[experiment]\nunknown = 1\n")
    assert cli.main(["simulate", "--config", bad, "--out", out]) == 2
    both = _write(tmp_path, "[privacy]\np = 0.5\ntau = 0.1\n", "both.ini")
    assert cli.main(["simulate", "--config", both, "--out", out]) == 2
    ok = _write(tmp_path, SMALL, "ok.ini")
    assert cli.main(["sweep", "--config", ok, "--param", "noise", "--grid", "a,b", "--out", out]) == 2
    assert "config error" in capsys.readouterr().err


def test_infeasible_budget_exit_3(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL + "[privacy]\nbudget_gap = 1.0\n[constants]\nc6 = 10000\n")
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 3
    err = capsys.readouterr().err
    assert "warning" in err and "infeasible budget" in err
    m = json.loads((out / "manifest.json").read_text())
    assert m["status"] == "infeasible-budget" and m["client"] == 0 and m["incomplete"] is True


def test_bound_failures_exit_1_and_are_listed(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "out"
    code = cli.main(["verify-bounds", "--config", cfg, "--out", str(out)])
    assert code == 1
    assert "FAIL toy.tradeoff_upper" in capsys.readouterr().err
    assert json.loads((out / "manifest.json").read_text())["status"] == "bound-failure"


def test_crash_leaves_incomplete_manifest(tmp_path, monkeypatch):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "out"

    def boom(*args, **kwargs):
        raise RuntimeError("crash")

    monkeypatch.setattr(cli, "run_experiment", boom)
    with pytest.raises(RuntimeError):
        cli.main(["simulate", "--config", cfg, "--out", str(out)])
    m = json.loads((out / "manifest.json").read_text())
    assert m["incomplete"] is True and m["status"] == "running"
    assert _rows(out / "rounds.csv") == [list(cli.ROUNDS_HEADER)]


def test_module_entry_point(tmp_path):
    cfg = _write(tmp_path, "[experiment]\nn_rounds = 0\n")
    proc = subprocess.run([sys.executable, "-m", "ppfl", "simulate", "--config", cfg, "--out",
                           str(tmp_path / "out")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
