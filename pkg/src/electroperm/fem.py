"""P1 saddle-point discretization of the interface transmission problem.

Unknowns are the intracellular potential ``u_i``, the extracellular potential
``u_e`` and the membrane current ``I_m`` (the Lagrange multiplier enforcing the
jump ``u_i - u_e = v`` on the membrane). The system is

    [ A_ii   0     C_i   0 ] [u_i]   [g f_i]
    [ 0      A_ee  C_e   m ] [u_e] = [g f_e]
    [ C_i^T  C_e^T 0     0 ] [I_m]   [-M v ]
    [ 0      m^T   0     0 ] [mu ]   [ 0   ]

with ``C_i = -∫ I_m φ_i``, ``C_e = +∫ I_m φ_e`` and ``M`` the P1 mass matrix
on the membrane. The constraint rows are the jump condition multiplied by -1,
which makes the matrix symmetric. The last row pins the mean of ``u_e`` and is
present only for periodic outer boundaries, where the potentials are otherwise
determined up to a shared constant.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import EXTRA, INTRA, MeshGeometry

RESIDUAL_TOL = 1e-10
DTN_MAX_NODES = 2000

_GAUSS2 = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhysParams:
    """Dimensionless model coefficients (defaults: Table 1 values, k_ep = 40, V_th = 2.5)."""

    sigma_i: float = 0.239
    sigma_e: float = 2.632
    c_m: float = 1.0
    S0: float = 1.0
    S1: float = 10001.0
    tau_ep: float = 1.0
    tau_res: float = 10.0
    k_ep: float = 40.0
    V_th: float = 2.5
    g_amplitude: float = 0.0
    g_waveform: str = "constant"  # constant | pulse
    g_t_on: float = 0.0
    g_t_off: float = math.inf

    def __post_init__(self):
        for name in ("sigma_i", "sigma_e", "c_m", "S0", "tau_ep", "tau_res", "k_ep"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.S1 >= 0:
            raise ValueError(f"S1 must be nonnegative, got {self.S1}")
        if self.tau_ep > self.tau_res:
            raise ValueError("tau_ep must not exceed tau_res")
        if self.g_waveform not in ("constant", "pulse"):
            raise ValueError(f"unknown g_waveform {self.g_waveform!r}")
        if self.g_waveform == "pulse" and not self.g_t_on <= self.g_t_off:
            raise ValueError("pulse needs g_t_on <= g_t_off")

    def g_at(self, t: float) -> float:
        if self.g_waveform == "constant":
            return self.g_amplitude
        return self.g_amplitude if self.g_t_on <= t <= self.g_t_off else 0.0


@dataclass(frozen=True)
class PotentialSolution:
    u_i: np.ndarray
    u_e: np.ndarray
    I_m: np.ndarray


@dataclass(eq=False)
class SaddleSystem:
    mesh: MeshGeometry
    sigma_i: float
    sigma_e: float
    A_ii: sp.csr_matrix
    A_ee: sp.csr_matrix
    C_i: sp.csr_matrix
    C_e: sp.csr_matrix
    J: sp.csr_matrix
    M_gamma: sp.csr_matrix
    gauge: np.ndarray | None
    f_i: np.ndarray  # right-hand side per unit field strength
    f_e: np.ndarray
    matrix: sp.csc_matrix
    extra_free: np.ndarray  # extra dof ids kept as unknowns
    timings: dict = field(default_factory=dict)
    _lu: object = field(default=None, repr=False)

    @property
    def n_i(self) -> int:
        return self.A_ii.shape[0]

    @property
    def n_e(self) -> int:
        return self.A_ee.shape[0]

    @property
    def n_trace(self) -> int:
        return self.M_gamma.shape[0]

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def rhs(self, v: np.ndarray, g_value: float) -> np.ndarray:
        b = np.zeros(self.size)
        b[: self.n_i] = g_value * self.f_i
        b[self.n_i : self.n_i + self.n_e] = g_value * self.f_e
        b[self.n_i + self.n_e : self.n_i + self.n_e + self.n_trace] = -(self.M_gamma @ v)
        return b


def _p1_local(mesh: MeshGeometry, mask: np.ndarray):
    tri = mesh.triangles[mask]
    p = mesh.vertices[tri]
    area = 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )
    # gradients of the barycentric coordinates
    gx = np.stack([p[:, 1, 1] - p[:, 2, 1], p[:, 2, 1] - p[:, 0, 1], p[:, 0, 1] - p[:, 1, 1]], axis=1)
    gy = np.stack([p[:, 2, 0] - p[:, 1, 0], p[:, 0, 0] - p[:, 2, 0], p[:, 1, 0] - p[:, 0, 0]], axis=1)
    gx /= 2.0 * area[:, None]
    gy /= 2.0 * area[:, None]
    k = area[:, None, None] * (gx[:, :, None] * gx[:, None, :] + gy[:, :, None] * gy[:, None, :])
    fx = area[:, None] * gx  # ∫ ∂x φ over the triangle
    return tri, area, k, fx


def _stiffness(mesh, region, dof, n, sigma):
    tri, area, k, fx = _p1_local(mesh, mesh.regions == region)
    d = dof[tri]
    rows = np.repeat(d, 3, axis=1).ravel()
    cols = np.tile(d, (1, 3)).ravel()
    A = sp.coo_matrix((sigma * k.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    f = np.zeros(n)
    np.add.at(f, d.ravel(), (-sigma * fx).ravel())
    lumped = np.zeros(n)
    np.add.at(lumped, d.ravel(), np.repeat(area / 3.0, 3))
    return A, f, lumped


def trace_mass(mesh: MeshGeometry) -> sp.csr_matrix:
    """P1 mass matrix on the membrane, two-point Gauss per edge."""
    e = mesh.trace_edges
    p = mesh.vertices[mesh.interface_edges]
    length = np.hypot(p[:, 1, 0] - p[:, 0, 0], p[:, 1, 1] - p[:, 0, 1])
    local = np.zeros((len(e), 2, 2))
    for s in _GAUSS2:
        phi = np.array([1.0 - s, s])
        local += 0.5 * np.outer(phi, phi)[None]
    local *= length[:, None, None]
    rows = np.repeat(e, 2, axis=1).ravel()
    cols = np.tile(e, (1, 2)).ravel()
    n = mesh.n_trace
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble(mesh: MeshGeometry, params: PhysParams) -> SaddleSystem:
    """Assemble and factorize the saddle-point matrix for ``mesh``.

    The matrix depends on geometry and conductivities only, so one
    factorization serves every time step and every trajectory.
    """
    t0 = time.perf_counter()
    A_ii, f_i, _ = _stiffness(mesh, INTRA, mesh.intra_dof, mesh.n_intra, params.sigma_i)
    A_ee, f_e, lumped_e = _stiffness(mesh, EXTRA, mesh.extra_dof, mesh.n_extra, params.sigma_e)
    M = trace_mass(mesh)
    N = mesh.n_trace
    nodes = mesh.interface_nodes

    if mesh.periodic:
        free = np.arange(mesh.n_extra)
    else:
        fixed = np.zeros(mesh.n_extra, dtype=bool)
        fixed[mesh.extra_dof[mesh.boundary_nodes]] = True
        free = np.flatnonzero(~fixed)
    A_ee = A_ee[free][:, free].tocsr()
    f_e = f_e[free]
    lumped_e = lumped_e[free]
    e_index = np.full(mesh.n_extra, -1)
    e_index[free] = np.arange(len(free))

    P_i = sp.coo_matrix((np.ones(N), (mesh.intra_dof[nodes], np.arange(N))), shape=(mesh.n_intra, N)).tocsr()
    ecol = e_index[mesh.extra_dof[nodes]]
    P_e = sp.coo_matrix((np.ones(N), (ecol, np.arange(N))), shape=(len(free), N)).tocsr()
    C_i = -(P_i @ M).tocsr()
    C_e = (P_e @ M).tocsr()
    J = sp.vstack([C_i, C_e]).T.tocsr()

    n_i, n_e = mesh.n_intra, len(free)
    gauge = lumped_e / lumped_e.sum() if mesh.periodic else None
    blocks = [
        [A_ii, None, C_i],
        [None, A_ee, C_e],
        [C_i.T, C_e.T, None],
    ]
    Kmat = sp.bmat(blocks, format="csr")
    if gauge is not None:
        col = np.zeros(n_i + n_e + N)
        col[n_i : n_i + n_e] = gauge
        g = sp.csr_matrix(col[:, None])
        Kmat = sp.bmat([[Kmat, g], [g.T, None]], format="csr")
    matrix = Kmat.tocsc()
    t1 = time.perf_counter()

    system = SaddleSystem(
        mesh=mesh,
        sigma_i=params.sigma_i,
        sigma_e=params.sigma_e,
        A_ii=A_ii,
        A_ee=A_ee,
        C_i=C_i,
        C_e=C_e,
        J=J,
        M_gamma=M,
        gauge=gauge,
        f_i=f_i,
        f_e=f_e,
        matrix=matrix,
        extra_free=free,
    )
    try:
        system._lu = splu(matrix)
    except MemoryError as exc:
        raise SolverError(f"out of memory factorizing {matrix.shape[0]} unknowns") from exc
    except RuntimeError as exc:
        raise SolverError(
            f"saddle-point matrix is singular ({matrix.shape[0]} unknowns, "
            f"gauge row {'present' if gauge is not None else 'absent'}, "
            f"outer bc {mesh.outer_bc_kind}): {exc}"
        ) from exc
    t2 = time.perf_counter()
    system.timings = {"assemble_s": t1 - t0, "factorize_s": t2 - t1}
    _check_factorization(system)
    return system


def _check_factorization(system: SaddleSystem) -> None:
    # a probe solve catches numerically singular factors that splu accepts
    rng = np.random.default_rng(0)
    b = rng.standard_normal(system.size)
    x = system._lu.solve(b)
    r = system.matrix @ x - b
    if not np.isfinite(x).all() or np.linalg.norm(r) > 1e-8 * np.linalg.norm(b) * max(1.0, np.abs(x).max()):
        raise SolverError(f"factorization of {system.size} unknowns is numerically singular")


def solve_potential(system: SaddleSystem, v, g_value: float, check: bool = True) -> PotentialSolution:
    """Potentials and membrane current for jump ``v`` and field strength ``g_value``.

    ``u_e`` is returned on the full extracellular dof numbering (zeros on
    Dirichlet nodes).
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (system.n_trace,):
        raise ValueError(f"v must have shape ({system.n_trace},), got {v.shape}")
    if not (np.isfinite(v).all() and math.isfinite(g_value)):
        raise ValueError("non-finite input to solve_potential")
    b = system.rhs(v, g_value)
    x = system._lu.solve(b)
    if check:
        r = system.matrix @ x - b
        scale = max(np.linalg.norm(b), np.linalg.norm(x) * _norm_inf(system))
        if np.linalg.norm(r) > RESIDUAL_TOL * scale:
            raise SolverError(f"residual {np.linalg.norm(r):.3e} exceeds tolerance (factorization corrupted?)")
    n_i, n_e, N = system.n_i, system.n_e, system.n_trace
    u_e = np.zeros(system.mesh.n_extra)
    u_e[system.extra_free] = x[n_i : n_i + n_e]
    return PotentialSolution(u_i=x[:n_i], u_e=u_e, I_m=x[n_i + n_e : n_i + n_e + N])


def _norm_inf(system: SaddleSystem) -> float:
    n = system.__dict__.get("_norm_inf")
    if n is None:
        n = float(abs(system.matrix).sum(axis=1).max())
        system.__dict__["_norm_inf"] = n
    return n


def membrane_current_operator(system: SaddleSystem) -> tuple[np.ndarray, np.ndarray]:
    """Dense maps with ``I_m = L @ v + g * i_g``.

    ``L[:, j]`` is the current induced by the j-th trace basis jump, ``i_g``
    the current induced by a unit field with zero jump.
    """
    N = system.n_trace
    if N > DTN_MAX_NODES:
        raise ValueError(f"{N} interface nodes exceed the dense limit of {DTN_MAX_NODES}")
    n_i, n_e = system.n_i, system.n_e
    B = np.zeros((system.size, N + 1))
    B[n_i + n_e : n_i + n_e + N, :N] = -system.M_gamma.toarray()
    B[:n_i, N] = system.f_i
    B[n_i : n_i + n_e, N] = system.f_e
    X = system._lu.solve(B)
    cur = X[n_i + n_e : n_i + n_e + N]
    return cur[:, :N].copy(), cur[:, N].copy()


def dtn_matrix(system: SaddleSystem) -> np.ndarray:
    """Galerkin matrix of the jump-to-current operator on the membrane trace space.

    Entry ``[k, j]`` is ``∫_Γ I_m(e_j) φ_k dS``, i.e. the discrete pairing
    ``<L φ_j, φ_k>``. Its eigenvalues relative to the membrane mass matrix
    are those of the nodal current map.
    """
    L, _ = membrane_current_operator(system)
    return system.M_gamma @ L


def generalized_spectrum(system: SaddleSystem) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of ``S x = mu M x`` for the symmetrized Galerkin DtN matrix."""
    from scipy.linalg import eigh

    S = dtn_matrix(system)
    S = 0.5 * (S + S.T)
    return eigh(S, system.M_gamma.toarray())


def flux_coefficient(system: SaddleSystem, n: int) -> float:
    """Rayleigh quotient of the discrete operator on the mode ``cos(n theta)``."""
    v = np.cos(n * system.mesh.interface_theta)
    I_m = solve_potential(system, v, 0.0).I_m
    Mv = system.M_gamma @ v
    return float(I_m @ Mv / (v @ Mv))


def dtn_oracle(R1: float, R2: float, sigma_i: float, sigma_e: float, n: int) -> float:
    """Flux coefficient of mode ``cos(n theta)`` for concentric disks, outer potential zero.

    Solves the separation-of-variables conditions for ``u_i = A r^n``,
    ``u_e = B r^n + C r^-n`` (``B + C ln r`` for n = 0): ``u_e(R2) = 0``,
    continuous flux at ``R1`` and unit jump at ``R1``.
    """
    if not 0 < R1 < R2:
        raise ValueError(f"need 0 < R1 < R2, got R1={R1}, R2={R2}")
    if not (sigma_i > 0 and sigma_e > 0):
        raise ValueError("conductivities must be positive")
    if n < 0 or int(n) != n:
        raise ValueError(f"mode must be a nonnegative integer, got {n}")
    n = int(n)
    if n == 0:
        # flux continuity forces C = 0, u_e(R2) = 0 then forces B = 0 and u_i = 1:
        # a constant jump drives no current
        return 0.0
    M = np.array([
        [0.0, R2**n, R2**-n],
        [sigma_i * n * R1 ** (n - 1), -sigma_e * n * R1 ** (n - 1), sigma_e * n * R1 ** (-n - 1)],
        [R1**n, -(R1**n), -(R1**-n)],
    ])
    A, _, _ = np.linalg.solve(M, [0.0, 0.0, 1.0])
    return float(sigma_i * n * A * R1 ** (n - 1))
