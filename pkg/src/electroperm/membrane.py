"""Membrane reaction law and the semi-implicit Euler updates for (v, w)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import PhysParams


@dataclass(frozen=True)
class MembraneState:
    t: float
    v: np.ndarray
    w: np.ndarray


def beta(xi, params: PhysParams):
    return 0.5 * (1.0 + np.tanh(params.k_ep * (np.abs(xi) - params.V_th)))


def f_rhs(v, w, params: PhysParams):
    """Porosity rate: electroporation branch when beta(v) >= w, resealing otherwise."""
    d = beta(v, params) - w
    return np.where(d >= 0, d / params.tau_ep, d / params.tau_res)


def lipschitz_constant(params: PhysParams) -> float:
    """Bound C with |f(v1,w1) - f(v2,w2)| <= C (|v1 - v2| + |w1 - w2|)."""
    # beta' <= k_ep / 2; the max of two Lipschitz maps is Lipschitz with the larger constant
    return max(params.k_ep / 2.0, 1.0) / params.tau_ep


def _finite(*arrays):
    for a in arrays:
        if not np.isfinite(a).all():
            raise FloatingPointError("non-finite membrane state")


def porosity_rate(v, w, params: PhysParams, tau_convention: str = "rate"):
    b = beta(v, params)
    if tau_convention == "rate":
        r = np.where(b >= w, 1.0 / params.tau_ep, 1.0 / params.tau_res)
    elif tau_convention == "literal":
        r = np.where(b >= w, params.tau_ep, params.tau_res)
    else:
        raise ValueError(f"unknown tau_convention {tau_convention!r}")
    return b, r


def step_w(state: MembraneState, dt: float, params: PhysParams, tau_convention: str = "rate") -> np.ndarray:
    """One semi-implicit step of the porosity ODE.

    The new value is a convex combination of ``w`` and ``beta(v)``, so
    [0, 1] is preserved exactly in floating point: ``c * b <= c`` and the
    numerator never exceeds the denominator.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    _finite(state.v, state.w)
    b, r = porosity_rate(state.v, state.w, params, tau_convention)
    c = dt * r
    return (state.w + c * b) / (1.0 + c)


def step_v(state: MembraneState, I_m, dW, dt: float, params: PhysParams) -> np.ndarray:
    """One semi-implicit Euler-Maruyama step of the membrane potential.

    The conductance term ``(S0 + S1 w) v`` is implicit, the membrane current
    and the noise increment ``dW = b(v) ΔW`` are explicit.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    _finite(state.v, state.w, I_m, dW)
    k = dt / params.c_m
    return (state.v - k * I_m + dW / params.c_m) / (1.0 + k * (params.S0 + params.S1 * state.w))
