"""Independent reference computations: concentric-disk DtN modes and a scalar OU process."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fem import PhysParams, assemble, dtn_oracle, flux_coefficient
from .membrane import MembraneState, step_v
from .mesh import GeometrySpec, generate_mesh
from .noise import BrownianPath


@dataclass(frozen=True)
class DtnRow:
    h: float
    n: int
    exact: float
    fem: float
    err: float  # relative; absolute in units of lambda_1 for n = 0


def disk_spec(h: float, R1: float = 0.25, R2: float = 0.5) -> GeometrySpec:
    return GeometrySpec(
        cell_center=(0.0, 0.0), cell_radius=R1, target_h=h,
        outer_bc_kind="dirichlet_zero", outer_shape="disk", outer_radius=R2,
    )


def dtn_table(modes, hs=(0.05, 0.025), R1: float = 0.25, R2: float = 0.5, params: PhysParams | None = None) -> list[DtnRow]:
    """FEM flux coefficient of ``cos(n theta)`` against the closed form for each mesh size."""
    params = params or PhysParams()
    rows = []
    for h in hs:
        system = assemble(generate_mesh(disk_spec(h, R1, R2)), params)
        scale = dtn_oracle(R1, R2, params.sigma_i, params.sigma_e, 1)
        for n in modes:
            exact = dtn_oracle(R1, R2, params.sigma_i, params.sigma_e, n)
            fem = flux_coefficient(system, n)
            err = abs(fem - exact) / (abs(exact) if exact != 0 else scale)
            rows.append(DtnRow(h, n, exact, fem, err))
    return rows


def observed_order(hs, errs) -> float:
    """Least-squares slope of log(err) against log(h)."""
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


@dataclass(frozen=True)
class OuResult:
    dts: np.ndarray
    errors: np.ndarray  # root-mean-square error at t_end
    order: float


def ou_strong_order(
    levels: int = 4,
    dt0: float = 2.0**-3,
    t_end: float = 1.0,
    alpha: float = 0.5,
    n_paths: int = 2000,
    ref_substeps: int = 16,
    seed: int = 0,
    params: PhysParams | None = None,
) -> OuResult:
    """Strong error of the decoupled v-update against the exact OU integrator.

    With ``I_m = 0`` and ``S1 = 0`` the v-update is a semi-implicit
    Euler-Maruyama step for ``c_m dv = -S0 v dt + alpha dW``. The reference
    integrates exactly on a grid ``ref_substeps`` times finer than the
    smallest step, driven by the same Brownian increments.
    """
    base = params or PhysParams()
    params = PhysParams(
        sigma_i=base.sigma_i, sigma_e=base.sigma_e, c_m=base.c_m, S0=base.S0, S1=0.0,
        tau_ep=base.tau_ep, tau_res=base.tau_res, k_ep=base.k_ep, V_th=base.V_th,
    )
    dt_min = dt0 / 2 ** (levels - 1)
    delta = dt_min / ref_substeps
    n_fine = int(round(t_end / delta))
    paths = [BrownianPath(seed=seed, trajectory_id=i, n_modes=1, fine_dt=delta) for i in range(n_paths)]
    dW = np.stack([p.fine(0, n_fine)[0] for p in paths], axis=1)  # (n_fine, n_paths)

    a = params.S0 / params.c_m
    s = alpha / params.c_m
    decay = math.exp(-a * delta)
    # exact transition for a path linear within each fine step
    weight = (1.0 - decay) / (a * delta)
    ref = np.zeros(n_paths)
    for j in range(n_fine):
        ref = decay * ref + s * weight * dW[j]

    zeros = np.zeros(n_paths)
    dts, errs = [], []
    for lev in range(levels):
        dt = dt0 / 2**lev
        m = int(round(dt / delta))
        inc = dW.reshape(n_fine // m, m, n_paths).sum(axis=1)
        v = np.zeros(n_paths)
        for k in range(len(inc)):
            v = step_v(MembraneState(k * dt, v, zeros), zeros, alpha * inc[k], dt, params)
        dts.append(dt)
        errs.append(math.sqrt(float(np.mean((v - ref) ** 2))))
    dts, errs = np.array(dts), np.array(errs)
    return OuResult(dts, errs, observed_order(dts, errs))
