"""Single trajectories and Monte-Carlo ensembles of the coupled membrane system.

Each step: membrane current from v(t_k), noise increment b(v(t_k)) ΔW, then
the v-update and the w-update, both reading the old state.
"""
from __future__ import annotations

import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import noise as noise_mod
from .config import SimConfig
from .fem import SaddleSystem, SolverError, assemble, membrane_current_operator, solve_potential
from .membrane import MembraneState, step_v, step_w
from .mesh import MeshGeometry, generate_mesh, import_mesh
from .stats import edge_weights, l2_norm_sq_gamma

log = logging.getLogger(__name__)

NOISE_BLOCK = 1024  # coarse steps of noise fetched at once
RESIDUAL_EVERY = 1000


class NumericalError(FloatingPointError):
    def __init__(self, trajectory_id: int, step: int, node: int):
        super().__init__(f"trajectory {trajectory_id}: non-finite state at step {step}, node {node}")
        self.trajectory_id = trajectory_id
        self.step = step
        self.node = node


class CheckpointError(RuntimeError):
    pass


class EnsembleError(RuntimeError):
    def __init__(self, failures: dict, records: list):
        ids = ", ".join(f"{k}: {v}" for k, v in sorted(failures.items()))
        super().__init__(f"{len(failures)} trajectories failed ({ids})")
        self.failures = failures
        self.records = records


@dataclass(eq=False)
class TrajectoryRecord:
    trajectory_id: int
    seed: tuple[int, int]
    t: np.ndarray
    norm_v_sq: np.ndarray
    norm_w_sq: np.ndarray
    theta: tuple[float, ...]
    v_at: np.ndarray  # (len(t), len(theta))
    w_at: np.ndarray
    w_min: float = 0.0
    w_max: float = 0.0
    snapshots_t: np.ndarray | None = None
    snapshots_v: np.ndarray | None = None
    snapshots_w: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def columns(self) -> tuple[list[str], np.ndarray]:
        names = ["t", "norm_v_sq", "norm_w_sq"]
        names += [f"v_at_theta_{th:.6f}" for th in self.theta]
        names += [f"w_at_theta_{th:.6f}" for th in self.theta]
        data = np.column_stack([self.t, self.norm_v_sq, self.norm_w_sq, self.v_at, self.w_at])
        return names, data


def build_mesh(config: SimConfig) -> MeshGeometry:
    if config.mesh_file:
        return import_mesh(config.resolve(config.mesh_file))
    return generate_mesh(config.geometry)


def build_system(config: SimConfig) -> SaddleSystem:
    return assemble(build_mesh(config), config.physics)


def _angle_weights(mesh: MeshGeometry, theta: float):
    """Linear interpolation along loop 0 of the membrane at polar angle ``theta``."""
    sel = np.flatnonzero(mesh.interface_loop == 0)
    th = mesh.interface_theta[sel]
    x = math.atan2(math.sin(theta), math.cos(theta))
    if x <= -math.pi + 1e-14:
        x = math.pi
    hit = np.flatnonzero(np.abs(th - x) < 1e-12)
    if len(hit):
        return int(sel[hit[0]]), int(sel[hit[0]]), 1.0, 0.0
    ext = np.concatenate([th[-1:] - 2 * math.pi, th, th[:1] + 2 * math.pi])
    ids = np.concatenate([sel[-1:], sel, sel[:1]])
    j = int(np.searchsorted(ext, x)) - 1
    a = (x - ext[j]) / (ext[j + 1] - ext[j])
    return int(ids[j]), int(ids[j + 1]), 1.0 - a, a


def _current_operator(system: SaddleSystem):
    cached = system.__dict__.get("_current_op")
    if cached is None:
        cached = membrane_current_operator(system)
        system.__dict__["_current_op"] = cached
    return cached


def _checkpoint_path(config: SimConfig, directory, trajectory_id: int) -> Path:
    return Path(directory) / f"traj_{trajectory_id:04d}.ckpt.npz"


def _save_checkpoint(path: Path, config_hash: str, k: int, v, w, arrays: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    os.close(fd)
    with open(tmp, "wb") as fh:
        np.savez(fh, config_hash=np.array(config_hash), step=np.array(k), v=v, w=w, **arrays)
    os.replace(tmp, path)


def run_trajectory(
    config: SimConfig,
    system: SaddleSystem,
    trajectory_id: int = 0,
    v0=None,
    w0=None,
    checkpoint_dir=None,
) -> TrajectoryRecord:
    """Integrate one realization on ``[0, t_final]`` from ``(v0, w0)`` (default zero)."""
    mesh = system.mesh
    N = mesh.n_trace
    P = config.physics
    dt, n_steps = config.dt, config.n_steps
    model = config.noise_model(N)
    if model.kind == "truncated_kl":
        model.check_modes(system.M_gamma)
    coef = model.coefficients(N)
    path = noise_mod.make_path(model, trajectory_id)
    n_per = path.steps_of(dt)
    edges = edge_weights(mesh)
    weights = [_angle_weights(mesh, th) for th in config.record_theta]
    n_theta = len(weights)

    if config.solver == "transfer":
        L, i_g = _current_operator(system)

    v = np.zeros(N) if v0 is None else np.array(v0, dtype=float)
    w = np.zeros(N) if w0 is None else np.array(w0, dtype=float)
    t = np.arange(n_steps + 1) * dt
    norm_v = np.empty(n_steps + 1)
    norm_w = np.empty(n_steps + 1)
    v_at = np.empty((n_steps + 1, n_theta))
    w_at = np.empty((n_steps + 1, n_theta))
    snap_every = config.snapshot_stride
    snaps = [] if snap_every > 0 else None
    w_min, w_max = math.inf, -math.inf

    def record(k):
        norm_v[k] = l2_norm_sq_gamma(v, mesh, edges)
        norm_w[k] = l2_norm_sq_gamma(w, mesh, edges)
        for j, (a, b, ca, cb) in enumerate(weights):
            v_at[k, j] = ca * v[a] + cb * v[b]
            w_at[k, j] = ca * w[a] + cb * w[b]
        if snaps is not None and k % snap_every == 0:
            snaps.append((t[k], v.copy(), w.copy()))

    k_start = 0
    ckpt = None
    chash = config.config_hash()
    if checkpoint_dir is not None:
        ckpt = _checkpoint_path(config, checkpoint_dir, trajectory_id)
        if ckpt.exists():
            with np.load(ckpt) as z:
                if str(z["config_hash"]) != chash:
                    raise CheckpointError(f"checkpoint {ckpt} was written for config {z['config_hash']}, not {chash}")
                k_start = int(z["step"])
                v, w = z["v"].copy(), z["w"].copy()
                norm_v[: k_start + 1] = z["norm_v"]
                norm_w[: k_start + 1] = z["norm_w"]
                v_at[: k_start + 1] = z["v_at"]
                w_at[: k_start + 1] = z["w_at"]
                w_min, w_max = float(z["w_min"]), float(z["w_max"])
                if snaps is not None:
                    snaps = [(a, b, c) for a, b, c in zip(z["snap_t"], z["snap_v"], z["snap_w"])]
            log.info("trajectory %d resumed at step %d", trajectory_id, k_start)
    if k_start == 0:
        record(0)
        w_min, w_max = min(w_min, w.min()), max(w_max, w.max())

    dW_block = None
    for k in range(k_start, n_steps):
        tk = k * dt
        g = P.g_at(tk)
        if config.solver == "transfer":
            I_m = L @ v + g * i_g
        else:
            I_m = solve_potential(system, v, g, check=(k % RESIDUAL_EVERY == 0)).I_m
        b = (k - k_start) % NOISE_BLOCK
        if b == 0:
            count = min(NOISE_BLOCK, n_steps - k)
            dW_block = path.coarse(k * n_per, n_per, count)
        dB = noise_mod.apply_noise(model, coef, v, dW_block[b])
        state = MembraneState(tk, v, w)
        try:
            v_new = step_v(state, I_m, dB, dt, P)
            w_new = step_w(state, dt, P, config.tau_convention)
        except FloatingPointError:
            bad = [a for a in (v, w, I_m, dB) if not np.isfinite(a).all()][0]
            raise NumericalError(trajectory_id, k, int(np.flatnonzero(~np.isfinite(bad))[0])) from None
        if not (np.isfinite(v_new).all() and np.isfinite(w_new).all()):
            bad = v_new if not np.isfinite(v_new).all() else w_new
            raise NumericalError(trajectory_id, k + 1, int(np.flatnonzero(~np.isfinite(bad))[0]))
        v, w = v_new, w_new
        lo, hi = w.min(), w.max()
        if lo < w_min:
            w_min = lo
        if hi > w_max:
            w_max = hi
        record(k + 1)
        if ckpt is not None and config.checkpoint_every > 0 and (k + 1) % config.checkpoint_every == 0 and k + 1 < n_steps:
            arrays = dict(
                norm_v=norm_v[: k + 2], norm_w=norm_w[: k + 2], v_at=v_at[: k + 2], w_at=w_at[: k + 2],
                w_min=np.array(w_min), w_max=np.array(w_max),
            )
            if snaps is not None:
                arrays.update(
                    snap_t=np.array([s[0] for s in snaps]),
                    snap_v=np.array([s[1] for s in snaps]).reshape(-1, N),
                    snap_w=np.array([s[2] for s in snaps]).reshape(-1, N),
                )
            _save_checkpoint(ckpt, chash, k + 1, v, w, arrays)

    if ckpt is not None and ckpt.exists():
        ckpt.unlink()
    rec = TrajectoryRecord(
        trajectory_id=trajectory_id,
        seed=(config.base_seed, trajectory_id),
        t=t,
        norm_v_sq=norm_v,
        norm_w_sq=norm_w,
        theta=tuple(config.record_theta),
        v_at=v_at,
        w_at=w_at,
        w_min=float(w_min),
        w_max=float(w_max),
        meta={"config_hash": chash},
    )
    if snaps:
        rec.snapshots_t = np.array([s[0] for s in snaps])
        rec.snapshots_v = np.array([s[1] for s in snaps])
        rec.snapshots_w = np.array([s[2] for s in snaps])
    return rec


# -- trajectory CSV files ----------------------------------------------------------


def trajectory_csv_name(trajectory_id: int) -> str:
    return f"traj_{trajectory_id:04d}.csv"


def write_trajectory_csv(rec: TrajectoryRecord, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names, data = rec.columns()
    path = out_dir / trajectory_csv_name(rec.trajectory_id)
    tmp = path.with_suffix(".csv.tmp")
    with open(tmp, "w", newline="\n") as fh:
        fh.write(f"# trajectory {rec.trajectory_id} seed {rec.seed[0]} {rec.seed[1]}\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",", header=",".join(names), comments="")
    os.replace(tmp, path)
    return path


def read_trajectory_csv(path) -> TrajectoryRecord:
    path = Path(path)
    with open(path) as fh:
        first = fh.readline()
        header = fh.readline().strip().split(",")
        if not first.startswith("# trajectory"):
            header = first.strip().split(",")
            fh.seek(0)
            fh.readline()
            tid, seed = -1, (0, -1)
        else:
            parts = first.split()
            tid, seed = int(parts[2]), (int(parts[4]), int(parts[5]))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(header) or header[:3] != ["t", "norm_v_sq", "norm_w_sq"]:
        raise ValueError(f"{path}: unexpected columns {header}")
    n_theta = (len(header) - 3) // 2
    theta = tuple(float(h.rsplit("_", 1)[1]) for h in header[3 : 3 + n_theta])
    return TrajectoryRecord(
        trajectory_id=tid,
        seed=seed,
        t=data[:, 0],
        norm_v_sq=data[:, 1],
        norm_w_sq=data[:, 2],
        theta=theta,
        v_at=data[:, 3 : 3 + n_theta],
        w_at=data[:, 3 + n_theta :],
        w_min=float(data[:, 3 + n_theta :].min()) if n_theta else 0.0,
        w_max=float(data[:, 3 + n_theta :].max()) if n_theta else 0.0,
    )


# -- ensembles ----------------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(config: SimConfig):
    _WORKER["config"] = config
    _WORKER["system"] = build_system(config)


def _worker_run(args):
    trajectory_id, out_dir, checkpoint_dir = args
    config, system = _WORKER["config"], _WORKER["system"]
    return _run_one(config, system, trajectory_id, out_dir, checkpoint_dir)


def _run_one(config, system, trajectory_id, out_dir, checkpoint_dir):
    try:
        rec = run_trajectory(config, system, trajectory_id, checkpoint_dir=checkpoint_dir)
    except (NumericalError, SolverError, FloatingPointError) as exc:
        return trajectory_id, None, f"{type(exc).__name__}: {exc}"
    if out_dir is not None:
        write_trajectory_csv(rec, Path(out_dir))
    return trajectory_id, rec, None


def run_monte_carlo(
    config: SimConfig,
    system: SaddleSystem | None = None,
    workers: int = 1,
    out_dir=None,
    checkpoint_dir=None,
    trajectory_ids=None,
) -> list[TrajectoryRecord]:
    """Run ``config.n_trajectories`` independent realizations, ordered by id.

    Results do not depend on ``workers``: every trajectory owns its noise
    stream and the solver data is rebuilt identically in each worker.
    Completed trajectories are written to ``out_dir`` as they finish; a
    failing trajectory does not stop the others and is reported at the end
    through :class:`EnsembleError`.
    """
    ids = list(range(config.n_trajectories)) if trajectory_ids is None else list(trajectory_ids)
    results = {}
    failures = {}
    if workers <= 1 or len(ids) == 1:
        if system is None:
            system = build_system(config)
        for i in ids:
            tid, rec, err = _run_one(config, system, i, out_dir, checkpoint_dir)
            results[tid] = rec
            if err is not None:
                failures[tid] = err
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(config,)) as pool:
            for tid, rec, err in pool.map(_worker_run, [(i, out_dir, checkpoint_dir) for i in ids]):
                results[tid] = rec
                if err is not None:
                    failures[tid] = err
    records = [results[i] for i in sorted(results) if results[i] is not None]
    if failures:
        raise EnsembleError(failures, records)
    return records
