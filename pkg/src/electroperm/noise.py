"""Reproducible Brownian increments on the membrane.

Normals come from a counter-based stream: Philox-4x64 keyed by
``(seed, trajectory_id << 32 | mode)`` with the fine-step index as counter,
so any increment of any trajectory can be regenerated in isolation. Each
counter block yields two 53-bit uniforms that go through Box–Muller.
"""
from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

KINDS = ("additive_uniform", "linear_multiplicative", "truncated_kl")
_MASK64 = (1 << 64) - 1
_TWO53 = 2.0**-53


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NoiseModel:
    kind: str = "additive_uniform"
    alpha: float = 0.5
    seed: int = 0
    fine_dt: float = 0.01 / 16
    profile: np.ndarray | None = None  # additive node weights, default uniform
    eigenvalues: np.ndarray | None = None  # truncated_kl: gamma_1..gamma_m
    modes: np.ndarray | None = None  # truncated_kl: (N, m) node samples of e_k
    mode_map: tuple[str, ...] = ()  # truncated_kl: additive | multiplicative per mode

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not self.alpha >= 0:
            raise ValueError("alpha must be nonnegative")
        if not self.fine_dt > 0:
            raise ValueError("fine_dt must be positive")
        if self.kind == "truncated_kl":
            if self.eigenvalues is None or self.modes is None:
                raise ValueError("truncated_kl needs eigenvalues and modes")
            gam = np.asarray(self.eigenvalues, dtype=float)
            modes = np.asarray(self.modes, dtype=float)
            if modes.ndim != 2 or modes.shape[1] != len(gam):
                raise ValueError(f"mode-count mismatch: {len(gam)} eigenvalues, modes of shape {modes.shape}")
            if (gam < 0).any() or not np.isfinite(gam).all():
                raise ValueError("eigenvalues must be finite and nonnegative")
            mm = self.mode_map or ("additive",) * len(gam)
            if len(mm) != len(gam) or not set(mm) <= {"additive", "multiplicative"}:
                raise ValueError("mode_map needs one of additive|multiplicative per mode")
            object.__setattr__(self, "mode_map", tuple(mm))

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues) if self.kind == "truncated_kl" else 1

    def check_modes(self, M_gamma, tol: float = 1e-8) -> None:
        """KL eigenfunctions must be orthonormal in the membrane mass inner product."""
        if self.kind != "truncated_kl":
            return
        E = np.asarray(self.modes, dtype=float)
        G = E.T @ (M_gamma @ E)
        err = np.abs(G - np.eye(G.shape[0])).max()
        if err > tol:
            raise ValueError(f"KL modes are not orthonormal on the membrane (max deviation {err:.2e})")

    def coefficients(self, n_nodes: int) -> np.ndarray:
        """(n_modes, N) node weights multiplying each mode increment."""
        if self.kind == "truncated_kl":
            gam = np.asarray(self.eigenvalues, dtype=float)
            E = np.asarray(self.modes, dtype=float)
            if E.shape[0] != n_nodes:
                raise ValueError(f"KL modes sampled on {E.shape[0]} nodes, membrane has {n_nodes}")
            return np.sqrt(gam)[:, None] * E.T
        prof = np.ones(n_nodes) if self.profile is None else np.asarray(self.profile, dtype=float)
        if prof.shape != (n_nodes,):
            raise ValueError(f"noise profile has shape {prof.shape}, expected ({n_nodes},)")
        return (self.alpha * prof)[None, :]

    def multiplicative_mask(self) -> np.ndarray:
        if self.kind == "truncated_kl":
            return np.array([m == "multiplicative" for m in self.mode_map])
        return np.array([self.kind == "linear_multiplicative"])


def apply_noise(model: NoiseModel, coef: np.ndarray, v: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """b(v) ΔW for per-mode increments ``dW`` and precomputed ``coef``."""
    mult = model.multiplicative_mask()
    out = np.zeros_like(v)
    for k in range(len(dW)):
        term = coef[k] * dW[k]
        out = out + (term * v if mult[k] else term)
    return out


def load_kl_modes(path) -> np.ndarray:
    """Read KL eigenfunctions: one row per membrane node, one column per mode."""
    rows = []
    with open(path, newline="") as fh:
        for i, rec in enumerate(csv.reader(fh)):
            if not rec or rec[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(x) for x in rec])
            except ValueError:
                if i == 0 and not rows:
                    continue  # header
                raise
    return np.array(rows, dtype=float)


def _uniform_pairs(seed: int, trajectory_id: int, mode: int, start: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    key = [seed & _MASK64, ((trajectory_id & 0xFFFFFFFF) << 32) | (mode & 0xFFFFFFFF)]
    raw = np.random.Philox(key=key, counter=start).random_raw(4 * count).reshape(count, 4)
    u1 = ((raw[:, 0] >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO53  # (0, 1]
    u2 = (raw[:, 1] >> np.uint64(11)).astype(np.float64) * _TWO53  # [0, 1)
    return u1, u2


def standard_normals(seed: int, trajectory_id: int, mode: int, start: int, count: int) -> np.ndarray:
    u1, u2 = _uniform_pairs(seed, trajectory_id, mode, start, count)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)


@dataclass(eq=False)
class BrownianPath:
    """Lazily generated fine increments for one trajectory."""

    seed: int
    trajectory_id: int
    n_modes: int
    fine_dt: float
    chunk: int = 4096
    max_chunks: int = 8
    _cache: OrderedDict = field(default_factory=OrderedDict, repr=False)

    def _chunk(self, c: int) -> np.ndarray:
        arr = self._cache.get(c)
        if arr is None:
            sq = math.sqrt(self.fine_dt)
            arr = np.stack([
                sq * standard_normals(self.seed, self.trajectory_id, m, c * self.chunk, self.chunk)
                for m in range(self.n_modes)
            ])
            self._cache[c] = arr
            if len(self._cache) > self.max_chunks:
                self._cache.popitem(last=False)
        return arr

    def fine(self, start: int, count: int) -> np.ndarray:
        """(n_modes, count) fine increments starting at fine index ``start``."""
        if start < 0:
            raise AlignmentError("negative fine index")
        out = np.empty((self.n_modes, count))
        pos = 0
        while pos < count:
            c, off = divmod(start + pos, self.chunk)
            take = min(self.chunk - off, count - pos)
            out[:, pos : pos + take] = self._chunk(c)[:, off : off + take]
            pos += take
        return out

    def index_of(self, t: float) -> int:
        x = t / self.fine_dt
        i = round(x)
        if abs(x - i) > 1e-9 * max(1.0, abs(x)):
            raise AlignmentError(f"t={t} is not on the fine grid (fine_dt={self.fine_dt})")
        return int(i)

    def steps_of(self, dt: float) -> int:
        x = dt / self.fine_dt
        n = round(x)
        if n < 1 or abs(x - n) > 1e-9 * max(1.0, x):
            raise AlignmentError(f"dt={dt} is not an integer multiple of fine_dt={self.fine_dt}")
        return int(n)

    def coarse(self, start: int, n_per: int, count: int) -> np.ndarray:
        """(count, n_modes) increments over ``count`` consecutive windows of ``n_per`` fine steps."""
        f = self.fine(start, n_per * count)
        return f.reshape(self.n_modes, count, n_per).sum(axis=2).T

    def increment(self, t: float, dt: float) -> np.ndarray:
        return self.coarse(self.index_of(t), self.steps_of(dt), 1)[0]


def make_path(model: NoiseModel, trajectory_id: int) -> BrownianPath:
    return BrownianPath(seed=model.seed, trajectory_id=trajectory_id, n_modes=model.n_modes, fine_dt=model.fine_dt)


def sample_increment(model: NoiseModel, path: BrownianPath, v, t: float, dt: float) -> np.ndarray:
    """b(v) ΔW over [t, t + dt] at every membrane node."""
    v = np.asarray(v, dtype=float)
    if not np.isfinite(v).all():
        raise ValueError("non-finite v")
    if path.n_modes != model.n_modes:
        raise ValueError(f"mode-count mismatch: path has {path.n_modes}, model {model.n_modes}")
    dW = path.increment(t, dt)
    return apply_noise(model, model.coefficients(len(v)), v, dW)


def coarsen_check(path: BrownianPath, t: float, n_fine: int) -> tuple[np.ndarray, np.ndarray]:
    """Coarse increment over ``n_fine`` fine steps from ``t`` and the exactly summed fine increments."""
    i0 = path.index_of(t)
    coarse = path.coarse(i0, n_fine, 1)[0]
    fine = path.fine(i0, n_fine)
    exact = np.array([math.fsum(row) for row in fine])
    return coarse, exact
