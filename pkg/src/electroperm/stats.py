"""Ergodicity diagnostics: membrane norms, burn-in time averages, ensemble spread, power-law fits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import MeshGeometry


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    n_points: int


@dataclass(frozen=True)
class EnsembleStats:
    T: np.ndarray  # running-average grid, post burn-in
    avg_v: np.ndarray  # (n_traj, len(T)) running averages of ||v||^2
    avg_w: np.ndarray
    std_v: np.ndarray | None  # cross-trajectory sample std, None for a single trajectory
    std_w: np.ndarray | None
    fit_v: SlopeFit | None
    fit_w: SlopeFit | None
    t_burn_in: float


def edge_weights(mesh: MeshGeometry):
    e = mesh.trace_edges
    p = mesh.vertices[mesh.interface_edges]
    length = np.hypot(p[:, 1, 0] - p[:, 0, 0], p[:, 1, 1] - p[:, 0, 1])
    return e[:, 0], e[:, 1], length


def l2_norm_sq_gamma(values, mesh: MeshGeometry, _edges=None) -> float:
    """∫_Γ values² dS for the P1 trace (two-point Gauss per edge, exact here)."""
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.n_trace,):
        raise ValueError(f"expected {mesh.n_trace} membrane values, got shape {values.shape}")
    a_idx, b_idx, length = _edges if _edges is not None else edge_weights(mesh)
    a, b = values[a_idx], values[b_idx]
    return float(length @ (a * a + a * b + b * b)) / 3.0


def _interp(t, s, x):
    return float(np.interp(x, t, s))


def _window_integral(t, s, lo, hi):
    """Exact integral of the piecewise-linear interpolant of (t, s) over [lo, hi]."""
    inside = (t > lo) & (t < hi)
    tt = np.concatenate([[lo], t[inside], [hi]])
    ss = np.concatenate([[_interp(t, s, lo)], s[inside], [_interp(t, s, hi)]])
    return float(np.sum(0.5 * (ss[1:] + ss[:-1]) * np.diff(tt)))


def time_average(series, t_burn_in: float, T: float, times=None) -> float:
    """(1 / (T - t_burn_in)) ∫_{t_burn_in}^T series dt by the trapezoid rule.

    ``times`` defaults to ``linspace(t_burn_in, T, len(series))``. A window
    of zero length returns the value at ``t_burn_in``.
    """
    s = np.asarray(series, dtype=float)
    if s.size == 0:
        raise ValueError("empty series")
    if times is None:
        if s.size == 1:
            return float(s[0])
        times = np.linspace(t_burn_in, T, s.size)
    t = np.asarray(times, dtype=float)
    if T < t_burn_in:
        raise ValueError("T must not precede t_burn_in")
    if t_burn_in < t[0] - 1e-12 or T > t[-1] + 1e-12:
        raise ValueError("series does not cover the averaging window")
    ref = _interp(t, s, t_burn_in)
    if T == t_burn_in:
        return ref
    # averaging the deviation from the window-start value keeps constants exact
    return ref + _window_integral(t, s - ref, t_burn_in, T) / (T - t_burn_in)


def running_time_average(series, times, t_burn_in: float, T_grid) -> np.ndarray:
    """``time_average`` at every point of ``T_grid`` in a single pass."""
    s = np.asarray(series, dtype=float)
    t = np.asarray(times, dtype=float)
    T_grid = np.asarray(T_grid, dtype=float)
    if T_grid.size == 0:
        raise ValueError("empty evaluation grid")
    if (np.diff(T_grid) <= 0).any():
        raise ValueError("T_grid must be strictly increasing")
    if T_grid[0] < t_burn_in or T_grid[-1] > t[-1] + 1e-12 or t_burn_in < t[0]:
        raise ValueError("T_grid must lie inside [t_burn_in, t_end]")
    # cumulative integral from t_burn_in at the sample points
    s_b = _interp(t, s, t_burn_in)
    k0 = int(np.searchsorted(t, t_burn_in, side="right"))
    tt = np.concatenate([[t_burn_in], t[k0:]])
    ss = np.concatenate([[0.0], s[k0:] - s_b])
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (ss[1:] + ss[:-1]) * np.diff(tt))])
    j = np.clip(np.searchsorted(tt, T_grid, side="right") - 1, 0, len(tt) - 1)
    sT = np.interp(T_grid, tt, ss)
    partial = 0.5 * (ss[j] + sT) * (T_grid - tt[j])
    width = T_grid - t_burn_in
    out = np.empty_like(T_grid)
    zero = width == 0
    out[zero] = s_b + sT[zero]
    out[~zero] = s_b + (cum[j] + partial)[~zero] / width[~zero]
    return out


def ensemble_std(values) -> np.ndarray:
    """Unbiased sample standard deviation across trajectories (axis 0), per time point."""
    x = np.asarray(values, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a [trajectory x time] matrix with at least 2 trajectories")
    return x.std(axis=0, ddof=1)


def loglog_slope(x, y, window=None) -> SlopeFit:
    """Least-squares line through (log x, log y); ``window`` is an index slice or (start, stop)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if window is not None:
        sl = window if isinstance(window, slice) else slice(*window)
        x, y = x[sl], y[sl]
    if len(x) < 2:
        raise ValueError("need at least two points")
    if (x <= 0).any() or (y <= 0).any():
        raise ValueError("log-log fit needs strictly positive data in the window")
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), r2, len(x))


def averaging_grid(times, t_burn_in: float, start=None, end=None, stride: int = 1) -> np.ndarray:
    """Solver grid points in [start, end], default [1.1 t_burn_in, t_final], subsampled by ``stride``."""
    t = np.asarray(times, dtype=float)
    lo = 1.1 * t_burn_in if start is None else start
    hi = t[-1] if end is None else end
    idx = np.flatnonzero((t >= lo - 1e-9) & (t <= hi + 1e-9) & (t > t_burn_in))
    if len(idx) == 0:
        raise ValueError("averaging window contains no grid points")
    keep = idx[::stride]
    if keep[-1] != idx[-1]:
        keep = np.append(keep, idx[-1])
    return t[keep]


def ensemble_statistics(times, norm_v, norm_w, t_burn_in: float, start=None, end=None, stride: int = 1) -> EnsembleStats:
    """Running averages per trajectory, their spread, and the spread's decay exponent.

    ``norm_v`` and ``norm_w`` are [trajectory x time] matrices of squared
    membrane norms on the common grid ``times``.
    """
    norm_v = np.atleast_2d(norm_v)
    norm_w = np.atleast_2d(norm_w)
    T = averaging_grid(times, t_burn_in, start, end, stride)
    avg_v = np.array([running_time_average(s, times, t_burn_in, T) for s in norm_v])
    avg_w = np.array([running_time_average(s, times, t_burn_in, T) for s in norm_w])
    std_v = std_w = fit_v = fit_w = None
    if len(norm_v) >= 2:
        std_v, std_w = ensemble_std(avg_v), ensemble_std(avg_w)
        x = T - t_burn_in
        fit_v = loglog_slope(x, std_v) if (std_v > 0).all() else None
        fit_w = loglog_slope(x, std_w) if (std_w > 0).all() else None
    return EnsembleStats(T, avg_v, avg_w, std_v, std_w, fit_v, fit_w, t_burn_in)
