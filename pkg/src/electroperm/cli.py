"""``electroperm`` command line: mesh, run, stats and oracle subcommands."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, SimConfig, dump_config, load_config
from .fem import SolverError, assemble, dtn_matrix
from .mesh import MeshError, MeshParseError, import_mesh, write_mesh
from .oracles import dtn_table, observed_order, ou_strong_order
from .sim import (
    EnsembleError,
    NumericalError,
    build_mesh,
    read_trajectory_csv,
    run_monte_carlo,
)
from .stats import ensemble_statistics

log = logging.getLogger("electroperm")

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_GEOMETRY = 2
EXIT_SOLVER = 3
EXIT_NUMERICS = 4
EXIT_DATA = 5
EXIT_USAGE = 64

DTN_TOL = {0.05: 0.05, 0.025: 0.015}
OU_MIN_ORDER = 0.8


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir: Path, config: SimConfig | None, mesh_stats: dict | None, phases: dict, extra=None) -> Path:
    """Manifest of everything in ``out_dir``; the only file that carries timestamps."""
    files = sorted(p for p in out_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "tool": "electroperm",
        "version": __version__,
        "created": datetime.now(timezone.utc).isoformat(),
        "config_hash": config.config_hash() if config is not None else None,
        "mesh": mesh_stats,
        "wall_clock_s": phases,
        "files": [
            {"path": str(p.relative_to(out_dir)), "bytes": p.stat().st_size, "sha256": _sha256(p)} for p in files
        ],
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _default_workers() -> int:
    env = os.environ.get("ELECTROPERM_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"ELECTROPERM_WORKERS must be an integer, got {env!r}") from None
        if n < 1:
            raise UsageError("ELECTROPERM_WORKERS must be >= 1")
        return n
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _config(args) -> SimConfig:
    cfg = load_config(args.config) if args.config else SimConfig()
    kw = {}
    if getattr(args, "seed", None) is not None:
        kw["base_seed"] = args.seed
    if getattr(args, "trajectories", None) is not None:
        kw["n_trajectories"] = args.trajectories
    return cfg.replace(**kw) if kw else cfg


# -- subcommands --------------------------------------------------------------------


def cmd_mesh(args) -> int:
    phases = {}
    if args.validate_only:
        target = args.mesh or args.out
        if not target:
            raise UsageError("--validate-only needs --mesh PATH (or --out PATH) naming an existing mesh file")
        mesh = import_mesh(target)
        print(f"{target}: valid mesh, " + ", ".join(f"{k}={v}" for k, v in mesh.stats().items()))
        return EXIT_OK
    cfg = _config(args)
    t0 = time.perf_counter()
    mesh = build_mesh(cfg)
    phases["mesh"] = time.perf_counter() - t0
    out = Path(args.out or "mesh.emesh")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_mesh(mesh, out)
    import_mesh(out)  # round trip
    if args.dtn_csv:
        t0 = time.perf_counter()
        S = dtn_matrix(assemble(mesh, cfg.physics))
        phases["dtn"] = time.perf_counter() - t0
        dtn_path = Path(args.dtn_csv)
        dtn_path.parent.mkdir(parents=True, exist_ok=True)
        with open(dtn_path, "w", newline="\n") as fh:
            np.savetxt(fh, S, fmt="%.17g", delimiter=",")
    write_manifest(out.parent, cfg, mesh.stats(), phases)
    print(f"wrote {out}: " + ", ".join(f"{k}={v}" for k, v in mesh.stats().items()))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    out = Path(args.out or "run")
    workers = args.workers if args.workers is not None else _default_workers()
    if workers < 1:
        raise UsageError("--workers must be >= 1")
    phases = {}
    t0 = time.perf_counter()
    mesh = build_mesh(cfg)
    phases["mesh"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    system = assemble(mesh, cfg.physics)
    phases["assemble"] = time.perf_counter() - t0
    if args.validate_only:
        print(f"config ok ({cfg.config_hash()}): {cfg.n_trajectories} trajectories x {cfg.n_steps} steps, "
              f"{mesh.n_trace} membrane nodes")
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(dump_config(cfg))
    ckpt = out / "checkpoints" if cfg.checkpoint_every > 0 else None
    t0 = time.perf_counter()
    failures = {}
    try:
        run_monte_carlo(cfg, system if workers == 1 else None, workers=workers, out_dir=out, checkpoint_dir=ckpt)
    except EnsembleError as exc:
        failures = exc.failures
    phases["run"] = time.perf_counter() - t0
    if ckpt is not None and ckpt.exists() and not any(ckpt.iterdir()):
        ckpt.rmdir()
    write_manifest(out, cfg, mesh.stats(), phases, {"workers": workers, "failures": {str(k): v for k, v in failures.items()}})
    if failures:
        for tid, msg in sorted(failures.items()):
            print(f"trajectory {tid} failed: {msg}", file=sys.stderr)
        solver = any(m.startswith("SolverError") for m in failures.values())
        return EXIT_SOLVER if solver else EXIT_NUMERICS
    print(f"wrote {cfg.n_trajectories} trajectories to {out}")
    return EXIT_OK


def _load_run(run_dir: Path):
    files = sorted(run_dir.glob("traj_*.csv"))
    if not files:
        raise DataError(f"no trajectory CSVs in {run_dir}")
    recs = []
    for p in files:
        try:
            recs.append(read_trajectory_csv(p))
        except ValueError as exc:
            raise DataError(f"{p.name}: {exc}") from None
    t = recs[0].t
    for p, r in zip(files, recs):
        if r.t.shape != t.shape or not np.array_equal(r.t, t):
            raise DataError(f"{p.name}: time grid differs from {files[0].name}")
    return files, recs, t


def _csv(path: Path, names, columns) -> None:
    data = np.column_stack(columns)
    with open(path, "w", newline="\n") as fh:
        np.savetxt(fh, data, fmt="%.17g", delimiter=",", header=",".join(names), comments="")


def cmd_stats(args) -> int:
    run_dir = Path(args.run_dir)
    if args.config:
        cfg = load_config(args.config)
    elif (run_dir / "config.cfg").exists():
        cfg = load_config(run_dir / "config.cfg")
    else:
        cfg = SimConfig()
    out = Path(args.out) if args.out else run_dir / "stats"
    phases = {}
    t0 = time.perf_counter()
    files, recs, t = _load_run(run_dir)
    tb = cfg.t_burn_in
    if not t[0] <= tb < t[-1]:
        raise DataError(f"burn-in {tb} outside the recorded interval [{t[0]}, {t[-1]}]")
    st = ensemble_statistics(
        t, [r.norm_v_sq for r in recs], [r.norm_w_sq for r in recs], tb,
        cfg.window_start, cfg.window_end, cfg.stats_stride,
    )
    out.mkdir(parents=True, exist_ok=True)
    labels = [p.stem for p in files]
    _csv(out / "time_avg_v.csv", ["T", *labels], [st.T, *st.avg_v])
    _csv(out / "time_avg_w.csv", ["T", *labels], [st.T, *st.avg_w])
    lines = [f"trajectories = {len(recs)}", f"t_burn_in = {tb!r}", f"window = {float(st.T[0])!r}, {float(st.T[-1])!r}"]
    if st.std_v is not None:
        _csv(out / "std_decay.csv", ["T", "T_minus_burn_in", "std_v", "std_w"], [st.T, st.T - tb, st.std_v, st.std_w])
        for name, fit in (("v", st.fit_v), ("w", st.fit_w)):
            if fit is None:
                lines.append(f"{name}: no fit (zero spread in window)")
            else:
                lines += [
                    f"slope_{name} = {fit.slope!r}",
                    f"intercept_{name} = {fit.intercept!r}",
                    f"r2_{name} = {fit.r2!r}",
                    f"points_{name} = {fit.n_points}",
                ]
    else:
        lines.append("single trajectory: no ensemble spread")
    (out / "slope.txt").write_text("\n".join(lines) + "\n")
    phases["stats"] = time.perf_counter() - t0
    write_manifest(out, cfg, None, phases, {"run_dir": str(run_dir)})
    print((out / "slope.txt").read_text(), end="")
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.kind == "dtn":
        if args.mode < 0:
            raise UsageError(f"mode must be a nonnegative integer, got {args.mode}")
        hs = tuple(sorted(DTN_TOL, reverse=True))
        rows = dtn_table([args.mode], hs)
        ok = True
        print(f"{'h':>8} {'n':>3} {'lambda_exact':>16} {'lambda_fem':>16} {'rel_err':>10}  status")
        for r in rows:
            good = r.err <= DTN_TOL[r.h]
            ok &= good
            print(f"{r.h:8.4f} {r.n:3d} {r.exact:16.10f} {r.fem:16.10f} {r.err:10.2e}  {'PASS' if good else 'FAIL'}")
        if args.mode > 0:
            order = observed_order([r.h for r in rows], [r.err for r in rows])
            print(f"observed order {order:.3f}")
        return EXIT_OK if ok else EXIT_TOLERANCE
    if args.levels < 2:
        raise UsageError("--levels must be >= 2")
    res = ou_strong_order(levels=args.levels, seed=args.seed or 0)
    print(f"{'dt':>10} {'rms_error':>12}")
    for dt, e in zip(res.dts, res.errors):
        print(f"{dt:10.6f} {e:12.4e}")
    good = res.order >= OU_MIN_ORDER
    print(f"fitted strong order {res.order:.3f} (>= {OU_MIN_ORDER}): {'PASS' if good else 'FAIL'}")
    return EXIT_OK if good else EXIT_TOLERANCE


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="electroperm", description="Stochastic cell electropermeabilization simulator")
    p.add_argument("--version", action="version", version=f"electroperm {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="config file or preset name (additive, multiplicative)")
        sp.add_argument("--out")

    sp = sub.add_parser("mesh", help="generate or validate a mesh")
    common(sp)
    sp.add_argument("--mesh", help="existing mesh file for --validate-only")
    sp.add_argument("--dtn-csv", help="also write the Galerkin DtN matrix as CSV")
    sp.add_argument("--validate-only", action="store_true")
    sp.set_defaults(func=cmd_mesh)

    sp = sub.add_parser("run", help="simulate an ensemble of trajectories")
    common(sp)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--trajectories", type=int)
    sp.add_argument("--validate-only", action="store_true")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("stats", help="time averages and ensemble spread of a run")
    sp.add_argument("run_dir")
    common(sp)
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("oracle", help="reference checks against closed-form solutions")
    sp.add_argument("kind", choices=("dtn", "ou"))
    sp.add_argument("--mode", type=int, default=1)
    sp.add_argument("--levels", type=int, default=4)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MeshParseError as exc:
        print(f"mesh file error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except MeshError as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
