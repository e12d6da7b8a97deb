import json
import os
import subprocess
import sys

import numpy as np
import pytest

import electroperm.cli as cli
from electroperm.cli import main
from electroperm.mesh import import_mesh
from electroperm.sim import EnsembleError


def run_cli(*args, env=None):
    e = dict(os.environ, **(env or {}))
    return subprocess.run([sys.executable, "-m", "electroperm.cli", *args], capture_output=True, text=True, env=e)


def test_mesh_default(tmp_path):
    out = tmp_path / "m" / "mesh.emesh"
    assert main(["mesh", "--out", str(out)]) == 0
    assert import_mesh(out).n_trace > 16
    man = json.loads((out.parent / "manifest.json").read_text())
    assert [f["path"] for f in man["files"]] == ["mesh.emesh"]


def test_mesh_dtn_dump(tmp_path):
    out = tmp_path / "mesh.emesh"
    assert main(["mesh", "--out", str(out), "--dtn-csv", str(tmp_path / "dtn.csv")]) == 0
    S = np.loadtxt(tmp_path / "dtn.csv", delimiter=",")
    n = import_mesh(out).n_trace
    assert S.shape == (n, n) and np.abs(S - S.T).max() <= 1e-9 * np.abs(S).max()


def test_mesh_infeasible(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("geometry.radius = 0.49\n")
    r = run_cli("mesh", "--config", str(cfg), "--out", str(tmp_path / "x.emesh"))
    assert r.returncode == 2
    assert "cell_inside_domain" in r.stderr
    assert not (tmp_path / "x.emesh").exists()


def test_mesh_validate_only(tmp_path):
    out = tmp_path / "mesh.emesh"
    main(["mesh", "--out", str(out)])
    before = sorted(p.name for p in tmp_path.iterdir())
    assert main(["mesh", "--validate-only", "--mesh", str(out)]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == before


def test_run_is_byte_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["run", "--config", "additive", "--trajectories", "1", "--seed", "7", "--out", str(d), "--workers", "1"]) == 0
    for name in ("traj_0000.csv", "config.cfg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    man = json.loads((a / "manifest.json").read_text())
    listed = {f["path"]: f["sha256"] for f in man["files"]}
    assert set(listed) == {"traj_0000.csv", "config.cfg"}
    assert man["config_hash"] and man["mesh"]["interface_nodes"] == 32
    header = (a / "traj_0000.csv").read_text().splitlines()[1]
    assert header.startswith("t,norm_v_sq,norm_w_sq,v_at_theta_3.141593")


def test_multiplicative_preset_runs(tmp_path):
    assert main(["run", "--config", "multiplicative", "--trajectories", "1", "--out", str(tmp_path), "--workers", "1"]) == 0
    data = np.loadtxt(tmp_path / "traj_0000.csv", delimiter=",", skiprows=2)
    assert data[-1, 0] == 300.0 and np.isfinite(data).all()


def test_run_validate_only(tmp_path):
    out = tmp_path / "r"
    assert main(["run", "--config", "additive", "--validate-only", "--out", str(out)]) == 0
    assert not out.exists()


@pytest.mark.parametrize("msg,code", [("NumericalError: trajectory 1: non-finite state", 4), ("SolverError: residual", 3)])
def test_run_failure_exit_codes(tmp_path, monkeypatch, capsys, msg, code):
    def boom(*a, **kw):
        raise EnsembleError({1: msg}, [])

    monkeypatch.setattr(cli, "run_monte_carlo", boom)
    assert main(["run", "--config", "additive", "--out", str(tmp_path), "--workers", "1"]) == code
    assert "trajectory 1" in capsys.readouterr().err
    assert json.loads((tmp_path / "manifest.json").read_text())["failures"] == {"1": msg}


def test_workers_env_fallback(monkeypatch):
    monkeypatch.setenv("ELECTROPERM_WORKERS", "3")
    assert cli._default_workers() == 3
    monkeypatch.setenv("ELECTROPERM_WORKERS", "zero")
    with pytest.raises(cli.UsageError):
        cli._default_workers()


def _write_run(d, series, t, tb=1.0):
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.cfg").write_text(f"sim.t_final = {float(t[-1])!r}\nsim.t_burn_in = {tb!r}\nsim.dt = 0.01\nstats.stride = 1\n")
    for k, s in enumerate(series):
        cols = np.column_stack([t, s, 0.5 * s, s, s])
        with open(d / f"traj_{k:04d}.csv", "w") as fh:
            fh.write(f"# trajectory {k} seed 0 {k}\n")
            np.savetxt(fh, cols, fmt="%.17g", delimiter=",", comments="",
                       header="t,norm_v_sq,norm_w_sq,v_at_theta_3.141593,w_at_theta_3.141593")


def test_stats_constant_trajectory(tmp_path):
    t = np.round(np.arange(0, 1001) * 0.01, 12)
    _write_run(tmp_path / "run", [np.full_like(t, 2.5)], t)
    assert main(["stats", str(tmp_path / "run")]) == 0
    avg = np.loadtxt(tmp_path / "run" / "stats" / "time_avg_v.csv", delimiter=",", skiprows=1)
    assert np.array_equal(avg[:, 1], np.full(len(avg), 2.5))
    assert "single trajectory" in (tmp_path / "run" / "stats" / "slope.txt").read_text()


def test_stats_exact_power_law(tmp_path):
    # two trajectories whose running averages differ by k (T - T_b)^(-1/2)
    dt, tb, k = 0.01, 1.0, 0.3
    t = np.round(np.arange(0, 1001) * dt, 12)
    jb = int(round(tb / dt))
    d = np.zeros_like(t)
    integral = k * np.sqrt(np.maximum(t - tb, 0.0))
    for j in range(jb + 1, len(t)):
        d[j] = 2 * (integral[j] - integral[j - 1]) / dt - d[j - 1]
    _write_run(tmp_path / "run", [np.full_like(t, 10.0), 10.0 + d], t, tb)
    assert main(["stats", str(tmp_path / "run"), "--out", str(tmp_path / "st")]) == 0
    report = dict(line.split(" = ") for line in (tmp_path / "st" / "slope.txt").read_text().splitlines() if " = " in line)
    assert float(report["slope_v"]) == pytest.approx(-0.5, abs=1e-6)
    assert float(report["r2_v"]) == pytest.approx(1.0, abs=1e-9)
    std = np.loadtxt(tmp_path / "st" / "std_decay.csv", delimiter=",", skiprows=1)
    assert std[0, 0] == pytest.approx(1.1 * tb)


def test_stats_inconsistent_grids(tmp_path):
    t = np.arange(0, 101) * 0.1
    _write_run(tmp_path / "run", [np.ones_like(t), np.ones_like(t)], t)
    lines = (tmp_path / "run" / "traj_0001.csv").read_text().splitlines()
    (tmp_path / "run" / "traj_0001.csv").write_text("\n".join(lines[:-1]) + "\n")
    r = run_cli("stats", str(tmp_path / "run"))
    assert r.returncode == 5 and "time grid" in r.stderr


def test_stats_empty_run(tmp_path):
    assert main(["stats", str(tmp_path)]) == 5


def test_oracle_dtn(capsys):
    assert main(["oracle", "dtn", "--mode", "1"]) == 0
    out = capsys.readouterr().out
    assert "0.9066051740" in out and "PASS" in out and "FAIL" not in out


def test_oracle_ou(capsys):
    assert main(["oracle", "ou", "--levels", "4"]) == 0
    assert "fitted strong order" in capsys.readouterr().out


def test_usage_errors():
    assert run_cli("oracle", "dtn", "--mode", "-2").returncode == 64
    assert run_cli("oracle", "dtn", "--mode", "x").returncode == 64
    assert run_cli("frobnicate").returncode == 64
    assert run_cli("run", "--config", "no-such-file").returncode == 64
