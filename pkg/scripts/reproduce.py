"""Figure data for one preset: pole traces, final profile, time averages, spread decay.

    python scripts/reproduce.py additive --out results/additive
    python scripts/reproduce.py multiplicative --out results/multiplicative --trajectories 20
"""
import argparse
import math
from pathlib import Path

import numpy as np

from electroperm.cli import main as cli_main
from electroperm.config import dump_config, load_config
from electroperm.sim import build_system, run_trajectory


def pole_band(run_dir: Path, out: Path, t_max: float = 30.0):
    """Ensemble mean and one-std band of v, w at theta = pi on [0, t_max]."""
    files = sorted(run_dir.glob("traj_*.csv"))
    data = np.array([np.loadtxt(f, delimiter=",", skiprows=2) for f in files])
    t = data[0, :, 0]
    keep = t <= t_max + 1e-9
    header = open(files[0]).read().splitlines()[1].split(",")
    iv, iw = header.index("v_at_theta_3.141593"), header.index("w_at_theta_3.141593")
    v, w = data[:, keep, iv], data[:, keep, iw]
    sd = v.std(axis=0, ddof=1) if len(files) > 1 else np.zeros(keep.sum())
    cols = np.column_stack([t[keep], v.mean(axis=0), sd, w.mean(axis=0)])
    np.savetxt(out / "pole_band.csv", cols, fmt="%.10g", delimiter=",", comments="", header="t,v_mean,v_std,w_mean")


def final_profile(cfg, out: Path):
    """v(theta) at t_final for trajectory 0."""
    system = build_system(cfg)
    rec = run_trajectory(cfg.replace(snapshot_stride=cfg.n_steps), system, 0)
    theta = system.mesh.interface_theta
    np.savetxt(out / "v_vs_theta.csv", np.column_stack([theta, rec.snapshots_v[-1], rec.snapshots_w[-1]]),
               fmt="%.10g", delimiter=",", comments="", header="theta,v,w")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("preset", choices=["additive", "multiplicative"])
    ap.add_argument("--out", default=None)
    ap.add_argument("--trajectories", type=int)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out or f"results/{args.preset}")
    cfg = load_config(args.preset)
    if args.trajectories:
        cfg = cfg.replace(n_trajectories=args.trajectories)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "config.cfg"
    cfg_path.write_text(dump_config(cfg))

    run_dir = out / "run"
    code = cli_main(["run", "--config", str(cfg_path), "--out", str(run_dir), "--workers", str(args.workers)])
    if code:
        raise SystemExit(code)
    cli_main(["stats", str(run_dir), "--out", str(out / "stats")])
    pole_band(run_dir, out)
    final_profile(cfg, out)
    prof = np.loadtxt(out / "v_vs_theta.csv", delimiter=",", skiprows=1)
    i_pi = np.argmin(np.abs(prof[:, 0] - math.pi))
    i_half = np.argmin(np.abs(np.abs(prof[:, 0]) - math.pi / 2))
    print(f"v(T_final) at theta=pi: {prof[i_pi, 1]:.4f}, at |theta|=pi/2: {prof[i_half, 1]:.4f}")


if __name__ == "__main__":
    main()
