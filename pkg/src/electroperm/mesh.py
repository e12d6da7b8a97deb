"""Boundary-fitted triangulations of a square (or disk) with an embedded circular cell.

The cell boundary is resolved exactly: interface vertices lie on the circle and
every interface edge separates one intracellular triangle from one
extracellular triangle. Potentials are discontinuous across the membrane, so
interface vertices carry one degree of freedom per side.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

INTRA, EXTRA = 0, 1
REGION_NAMES = {INTRA: "intra", EXTRA: "extra"}
REGION_CODES = {"intra": INTRA, "extra": EXTRA}

AREA_TOL = 1e-14
PERIODIC_TOL = 1e-10


class MeshError(ValueError):
    """A mesh violates one of its structural invariants."""

    def __init__(self, invariant: str, message: str):
        super().__init__(f"[{invariant}] {message}")
        self.invariant = invariant


class GeometryError(MeshError):
    """The requested geometry cannot be meshed at the requested resolution."""


class MeshParseError(ValueError):
    def __init__(self, line: int, column: int, message: str):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class GeometrySpec:
    cell_center: tuple[float, float] = (0.5, 0.5)
    cell_radius: float = 0.25
    target_h: float = 0.02
    outer_bc_kind: str = "periodic"  # periodic | dirichlet_zero
    outer_shape: str = "square"  # square | disk
    outer_radius: float = 0.5  # only used for outer_shape == "disk"
    domain_side: float = 1.0

    def validate(self) -> None:
        if self.domain_side != 1.0:
            raise GeometryError("domain_side", "the domain is the unit square; domain_side must be 1.0")
        if not self.target_h > 0:
            raise GeometryError("target_h", f"target_h must be positive, got {self.target_h}")
        if not self.cell_radius > 0:
            raise GeometryError("cell_radius", f"cell_radius must be positive, got {self.cell_radius}")
        if self.outer_bc_kind not in ("periodic", "dirichlet_zero"):
            raise GeometryError("outer_bc_kind", f"unknown outer_bc_kind {self.outer_bc_kind!r}")
        if self.outer_shape not in ("square", "disk"):
            raise GeometryError("outer_shape", f"unknown outer_shape {self.outer_shape!r}")
        cx, cy = self.cell_center
        if self.outer_shape == "square":
            gap = min(cx, cy, 1.0 - cx, 1.0 - cy) - self.cell_radius
        else:
            if self.outer_bc_kind == "periodic":
                raise GeometryError("outer_bc_kind", "a disk-shaped domain cannot be periodic")
            gap = self.outer_radius - self.cell_radius
        if gap < self.target_h:
            raise GeometryError(
                "cell_inside_domain",
                f"cell must stay at least target_h={self.target_h} away from the outer boundary (gap {gap:.4g})",
            )
        if interface_node_count(self.cell_radius, self.target_h) < 16:
            raise GeometryError(
                "interface_resolution",
                f"target_h={self.target_h} resolves the circle with fewer than 16 interface nodes",
            )


def interface_node_count(radius: float, h: float) -> int:
    # multiple of 4 so that theta = 0, +-pi/2, pi are nodes
    return 4 * math.ceil(2.0 * math.pi * radius / (4.0 * h))


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MeshGeometry:
    """Immutable triangulation with interface and periodic structure.

    Build through :meth:`from_arrays`; all derived structure (edge
    orientation, normals, angles, dof numbering) is computed there from the
    raw arrays, so a mesh written to disk and read back is identical.
    """

    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3), counterclockwise
    regions: np.ndarray  # (nt,), INTRA or EXTRA
    interface_edges: np.ndarray  # (K, 2), intra region on the left
    interface_normals: np.ndarray  # (K, 2), pointing from intra to extra
    interface_nodes: np.ndarray  # (N,), vertex ids sorted by (loop, theta)
    interface_theta: np.ndarray  # (N,)
    interface_loop: np.ndarray  # (N,)
    trace_edges: np.ndarray  # (K, 2) in trace-node numbering
    loop_centers: np.ndarray  # (n_loops, 2)
    loop_radii: np.ndarray  # (n_loops,)
    periodic_pairs: np.ndarray  # (P, 2) slave, master
    boundary_nodes: np.ndarray  # outer boundary vertex ids
    intra_dof: np.ndarray  # (nv,), -1 outside the intra region
    extra_dof: np.ndarray  # (nv,), -1 outside the extra region; periodic slaves share the master's dof
    n_intra: int
    n_extra: int
    trace_dof: np.ndarray = field(repr=False)  # (nv,), -1 off the interface

    @property
    def n_trace(self) -> int:
        return len(self.interface_nodes)

    @property
    def periodic(self) -> bool:
        return len(self.periodic_pairs) > 0

    @property
    def outer_bc_kind(self) -> str:
        return "periodic" if self.periodic else "dirichlet_zero"

    @property
    def cell_center(self) -> np.ndarray:
        return self.loop_centers[0]

    @property
    def cell_radius(self) -> float:
        return float(self.loop_radii[0])

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return _signed_areas(p)

    def max_edge_length(self) -> float:
        p = self.vertices[self.triangles]
        e = np.concatenate([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]])
        return float(np.sqrt((e**2).sum(axis=1)).max())

    def stats(self) -> dict:
        return {
            "vertices": len(self.vertices),
            "triangles": len(self.triangles),
            "interface_nodes": self.n_trace,
            "intra_dofs": self.n_intra,
            "extra_dofs": self.n_extra,
        }

    @classmethod
    def from_arrays(cls, vertices, triangles, regions, interface_edges, periodic_pairs=()) -> "MeshGeometry":
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
        triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        regions = np.asarray(regions, dtype=np.int8).reshape(-1)
        iface = np.asarray(interface_edges, dtype=np.int64).reshape(-1, 2)
        pairs = np.asarray(periodic_pairs, dtype=np.int64).reshape(-1, 2)
        nv = len(vertices)

        if len(regions) != len(triangles):
            raise MeshError("region_tags", "every triangle needs a region tag")
        if not np.isin(regions, (INTRA, EXTRA)).all():
            raise MeshError("region_tags", "region tags must be intra or extra")
        for name, arr in (("triangles", triangles), ("interface", iface), ("periodic", pairs)):
            if arr.size and (arr.min() < 0 or arr.max() >= nv):
                raise MeshError("vertex_index", f"{name} reference a vertex outside 0..{nv - 1}")

        areas = _signed_areas(vertices[triangles])
        if (np.abs(areas) <= AREA_TOL).any():
            raise MeshError("nondegenerate", f"triangle {int(np.argmin(np.abs(areas)))} has area <= {AREA_TOL}")
        if (areas < 0).any():
            raise MeshError("counterclockwise", f"triangle {int(np.argmax(areas < 0))} is clockwise")

        # directed edge -> triangles
        owners: dict[tuple[int, int], list[int]] = {}
        for t, (a, b, c) in enumerate(triangles.tolist()):
            for e in ((a, b), (b, c), (c, a)):
                owners.setdefault(e, []).append(t)
        undirected: dict[tuple[int, int], list[int]] = {}
        for (a, b), ts in owners.items():
            if len(ts) > 1:
                raise MeshError("conforming", f"directed edge ({a}, {b}) appears in {len(ts)} triangles")
            undirected.setdefault((min(a, b), max(a, b)), []).append(ts[0])

        iface_set = set()
        oriented = []
        for k, (a, b) in enumerate(iface.tolist()):
            key = (min(a, b), max(a, b))
            if key in iface_set:
                raise MeshError("interface_edges", f"interface edge {k} is listed twice")
            iface_set.add(key)
            ts = undirected.get(key, [])
            tags = sorted(int(regions[t]) for t in ts)
            if tags != [INTRA, EXTRA]:
                raise MeshError(
                    "interface_two_sided",
                    f"interface edge {k} ({a}, {b}) must border one intra and one extra triangle, "
                    f"found {[REGION_NAMES[x] for x in tags]}",
                )
            t_in = ts[0] if regions[ts[0]] == INTRA else ts[1]
            oriented.append((a, b) if (a, b) in owners and owners[(a, b)][0] == t_in else (b, a))
        for key, ts in undirected.items():
            if len(ts) == 2 and regions[ts[0]] != regions[ts[1]] and key not in iface_set:
                raise MeshError("interface_edges", f"edge {key} separates intra from extra but is not an interface edge")
        iface = np.array(oriented, dtype=np.int64).reshape(-1, 2)
        if len(iface) == 0:
            raise MeshError("interface_edges", "mesh has no interface")

        tvec = vertices[iface[:, 1]] - vertices[iface[:, 0]]
        normals = np.column_stack([tvec[:, 1], -tvec[:, 0]]) / np.linalg.norm(tvec, axis=1)[:, None]

        # loops
        succ: dict[int, int] = {}
        for a, b in iface.tolist():
            if a in succ:
                raise MeshError("interface_edges", f"interface vertex {a} starts two edges")
            succ[a] = b
        if set(succ) != set(succ.values()):
            raise MeshError("interface_edges", "interface edges do not form closed loops")
        loops = []
        remaining = set(succ)
        while remaining:
            start = min(remaining)
            loop = [start]
            remaining.discard(start)
            nxt = succ[start]
            while nxt != start:
                loop.append(nxt)
                remaining.discard(nxt)
                nxt = succ[nxt]
            loops.append(loop)
        loops.sort(key=lambda lp: vertices[lp].mean(axis=0).tolist())

        nodes, thetas, loop_ids, centers, radii = [], [], [], [], []
        for li, lp in enumerate(loops):
            pts = vertices[lp]
            center = pts.mean(axis=0)
            d = pts - center
            r = np.hypot(d[:, 0], d[:, 1])
            radius = r.mean()
            if np.abs(r - radius).max() > 1e-10 * radius:
                raise MeshError("interface_on_circle", f"interface loop {li} nodes are not on a common circle")
            th = np.arctan2(d[:, 1], d[:, 0])
            th[th <= -math.pi + 1e-14] = math.pi
            order = np.argsort(th, kind="stable")
            nodes.extend(np.asarray(lp)[order].tolist())
            thetas.extend(th[order].tolist())
            loop_ids.extend([li] * len(lp))
            centers.append(center)
            radii.append(radius)
        nodes = np.array(nodes, dtype=np.int64)

        mids = 0.5 * (vertices[iface[:, 0]] + vertices[iface[:, 1]])
        t_in = [undirected[(min(a, b), max(a, b))] for a, b in iface.tolist()]
        t_in = np.array([ts[0] if regions[ts[0]] == INTRA else ts[1] for ts in t_in])
        cent = vertices[triangles[t_in]].mean(axis=1)
        if (np.einsum("ij,ij->i", normals, mids - cent) <= 0).any():
            raise MeshError("normal_orientation", "interface normals must point from intra to extra")

        trace_dof = np.full(nv, -1, dtype=np.int64)
        trace_dof[nodes] = np.arange(len(nodes))
        trace_edges = trace_dof[iface]

        boundary = sorted({v for key, ts in undirected.items() if len(ts) == 1 and key not in iface_set for v in key})
        boundary = np.array(boundary, dtype=np.int64)

        intra_dof = np.full(nv, -1, dtype=np.int64)
        iv = np.unique(triangles[regions == INTRA])
        intra_dof[iv] = np.arange(len(iv))
        ev = np.unique(triangles[regions == EXTRA])
        if len(pairs):
            pairs = _resolve_pairs(pairs)
            _check_pairs(vertices, pairs)
        master = np.arange(nv)
        if len(pairs):
            master[pairs[:, 0]] = pairs[:, 1]
        reps = np.unique(master[ev])
        extra_dof = np.full(nv, -1, dtype=np.int64)
        rep_index = np.full(nv, -1, dtype=np.int64)
        rep_index[reps] = np.arange(len(reps))
        extra_dof[ev] = rep_index[master[ev]]

        return cls(
            vertices=_frozen(vertices, float),
            triangles=_frozen(triangles, np.int64),
            regions=_frozen(regions, np.int8),
            interface_edges=_frozen(iface, np.int64),
            interface_normals=_frozen(normals, float),
            interface_nodes=_frozen(nodes, np.int64),
            interface_theta=_frozen(thetas, float),
            interface_loop=_frozen(loop_ids, np.int64),
            trace_edges=_frozen(trace_edges, np.int64),
            loop_centers=_frozen(centers, float),
            loop_radii=_frozen(radii, float),
            periodic_pairs=_frozen(pairs, np.int64),
            boundary_nodes=_frozen(boundary, np.int64),
            intra_dof=_frozen(intra_dof, np.int64),
            extra_dof=_frozen(extra_dof, np.int64),
            n_intra=len(iv),
            n_extra=len(reps),
            trace_dof=_frozen(trace_dof, np.int64),
        )


def _signed_areas(p: np.ndarray) -> np.ndarray:
    return 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )


def _resolve_pairs(pairs: np.ndarray) -> np.ndarray:
    """Follow slave -> master chains so every slave points at a final master."""
    m = dict(pairs.tolist())
    out = []
    for s in m:
        t, seen = m[s], {s}
        while t in m:
            if t in seen:
                raise MeshError("periodic_pairs", f"periodic pairing has a cycle through vertex {s}")
            seen.add(t)
            t = m[t]
        out.append((s, t))
    return np.array(sorted(out), dtype=np.int64).reshape(-1, 2)


def _check_pairs(vertices: np.ndarray, pairs: np.ndarray) -> None:
    d = vertices[pairs[:, 0]] - vertices[pairs[:, 1]]
    for k, (dx, dy) in enumerate(d.tolist()):
        ok_x = abs(abs(dx) - 1.0) <= PERIODIC_TOL or abs(dx) <= PERIODIC_TOL
        ok_y = abs(abs(dy) - 1.0) <= PERIODIC_TOL or abs(dy) <= PERIODIC_TOL
        if not (ok_x and ok_y) or (abs(dx) <= PERIODIC_TOL and abs(dy) <= PERIODIC_TOL):
            raise MeshError("periodic_pairs", f"periodic pair {k} does not match opposite boundary vertices")


# -- generation --------------------------------------------------------------------


class _PointSet:
    """Deduplicating vertex store keyed on exact coordinates."""

    def __init__(self):
        self.coords: list[tuple[float, float]] = []
        self.index: dict[tuple[float, float], int] = {}

    def add(self, x: float, y: float) -> int:
        key = (float(x) + 0.0, float(y) + 0.0)
        i = self.index.get(key)
        if i is None:
            i = len(self.coords)
            self.index[key] = i
            self.coords.append(key)
        return i


def _ring(r: float, angles_k, n: int):
    out = []
    for k in angles_k:
        th = -math.pi + 2.0 * math.pi * k / n
        x, y = r * math.cos(th), r * math.sin(th)
        # snap nodes on the symmetry axes
        q = (4 * k) % n == 0
        if q and (4 * k // n) % 2 == 0:
            y = 0.0
        elif q:
            x = 0.0
        out.append((x, y))
    return out


def _delaunay_keep(points: np.ndarray, ring_ids: set[int]) -> np.ndarray:
    """Delaunay triangles, minus those spanned entirely by ring vertices (the hole)."""
    tri = Delaunay(points).simplices
    keep = [t for t in tri.tolist() if not all(v in ring_ids for v in t)]
    return np.array(keep, dtype=np.int64).reshape(-1, 3)


def _local_patch(spec: GeometrySpec, n: int, full: bool):
    """Points and triangles in coordinates relative to the cell center.

    With ``full=False`` only the lower-left quadrant (dx <= 0, dy <= 0) is
    built; the caller mirrors it.
    """
    R, h = spec.cell_radius, spec.target_h
    cx, cy = spec.cell_center
    s = 2.0 * math.pi * R / n
    if spec.outer_shape == "square":
        gap = min(cx, cy, 1.0 - cx, 1.0 - cy) - R
    else:
        gap = spec.outer_radius - R
    dr_in = min(s, 0.3 * R)
    dr_out = min(s, 0.3 * gap)
    r_in, r_out = R - dr_in, R + dr_out

    ks = list(range(n)) if full else list(range(n // 4 + 1))
    ring_in, ring_g, ring_out = (_ring(r, ks, n) for r in (r_in, R, r_out))

    ng = math.ceil(1.0 / h)
    ng += ng % 2
    hg = 1.0 / ng
    margin_out = max(0.6 * hg, 0.55 * 2.0 * math.pi * r_out / n)
    margin_in = 0.5 * hg

    grid = []
    if spec.outer_shape == "square":
        if full:
            gx = [i / ng for i in range(ng + 1)]
            grid = [(x - cx, y - cy) for x in gx for y in gx]
        else:
            half = ng // 2
            g1 = [-(i / ng) for i in range(half + 1)]
            grid = [(x, y) for x in g1 for y in g1]
        outer_bd = []
    else:
        m = math.ceil(spec.outer_radius / hg)
        rng = range(-m, m + 1) if full else range(-m, 1)
        grid = [(i * hg, j * hg) for i in rng for j in rng]
        n2 = interface_node_count(spec.outer_radius, h)
        ks2 = list(range(n2)) if full else list(range(n2 // 4 + 1))
        outer_bd = _ring(spec.outer_radius, ks2, n2)

    def dist(p):
        return math.hypot(p[0], p[1])

    inner_pts = [p for p in grid if dist(p) <= r_in - margin_in]
    if spec.outer_shape == "square":
        outer_pts = [p for p in grid if dist(p) >= r_out + margin_out]
    else:
        outer_pts = [p for p in grid if r_out + margin_out <= dist(p) <= spec.outer_radius - 0.5 * hg]
        outer_pts += outer_bd

    ps = _PointSet()
    tris, regs = [], []

    def add_delaunay(pts, ring, region):
        ids = [ps.add(*p) for p in ring] + [ps.add(*p) for p in pts]
        ring_ids = set(range(len(ring)))
        local = _delaunay_keep(np.array(ring + pts), ring_ids)
        for t in local.tolist():
            tris.append([ids[v] for v in t])
            regs.append(region)

    add_delaunay(inner_pts, ring_in, INTRA)
    add_delaunay(outer_pts, ring_out, EXTRA)

    ii = [ps.add(*p) for p in ring_in]
    gg = [ps.add(*p) for p in ring_g]
    oo = [ps.add(*p) for p in ring_out]
    m = len(ks) if full else len(ks) - 1
    iface = []
    for k in range(m):
        k1 = (k + 1) % len(ks)
        tris += [[ii[k], ii[k1], gg[k1]], [ii[k], gg[k1], gg[k]]]
        regs += [INTRA, INTRA]
        tris += [[gg[k], gg[k1], oo[k1]], [gg[k], oo[k1], oo[k]]]
        regs += [EXTRA, EXTRA]
        iface.append((gg[k], gg[k1]))
    return ps, tris, regs, iface


def generate_mesh(spec: GeometrySpec) -> MeshGeometry:
    """Mesh the geometry described by ``spec``.

    When the cell sits at the domain center (always the case for a disk
    domain) the lower-left quadrant is triangulated and mirrored across both
    axes, which makes the mesh symmetric under x -> 1 - x and y -> 1 - y.
    """
    spec.validate()
    n = interface_node_count(spec.cell_radius, spec.target_h)
    cx, cy = spec.cell_center
    symmetric = spec.outer_shape == "disk" or (cx == 0.5 and cy == 0.5)
    ps, tris, regs, iface = _local_patch(spec, n, full=not symmetric)

    if symmetric:
        loc = np.array(ps.coords)
        out = _PointSet()
        all_tris, all_regs, all_iface = [], [], []
        for sx, sy in ((1, 1), (-1, 1), (1, -1), (-1, -1)):
            ids = [out.add(sx * x, sy * y) for x, y in loc.tolist()]
            all_tris += [[ids[v] for v in t] for t in tris]
            all_regs += regs
            all_iface += [(ids[a], ids[b]) for a, b in iface]
        ps, tris, regs, iface = out, all_tris, all_regs, all_iface

    loc = np.array(ps.coords)
    verts = np.column_stack([cx + loc[:, 0], cy + loc[:, 1]])
    if spec.outer_shape == "square":
        # grid lines on the outer boundary must be exact for periodic matching
        for col in (0, 1):
            c = verts[:, col]
            c[np.abs(c) < 1e-13] = 0.0
            c[np.abs(c - 1.0) < 1e-13] = 1.0
    tris = np.array(tris, dtype=np.int64)
    areas = _signed_areas(verts[tris])
    flip = areas < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    pairs = _periodic_pairs(verts) if spec.outer_bc_kind == "periodic" else np.zeros((0, 2), np.int64)
    return MeshGeometry.from_arrays(verts, tris, regs, iface, pairs)


def _periodic_pairs(verts: np.ndarray) -> np.ndarray:
    """Pair x=1 with x=0 and y=1 with y=0 vertices; all corners map to (0, 0)."""
    pairs = {}
    for axis in (0, 1):
        other = 1 - axis
        lo = np.flatnonzero(verts[:, axis] == 0.0)
        hi = np.flatnonzero(verts[:, axis] == 1.0)
        lo = lo[np.argsort(verts[lo, other], kind="stable")]
        hi = hi[np.argsort(verts[hi, other], kind="stable")]
        if len(lo) != len(hi) or np.abs(verts[lo, other] - verts[hi, other]).max(initial=0.0) > PERIODIC_TOL:
            raise MeshError("periodic_pairs", f"boundary vertices on opposite sides (axis {axis}) do not match")
        for s, m in zip(hi.tolist(), lo.tolist()):
            pairs[s] = m
    out = _resolve_pairs(np.array(list(pairs.items()), dtype=np.int64).reshape(-1, 2))
    return out


# -- measures ---------------------------------------------------------------------


def interface_measure(mesh: MeshGeometry) -> float:
    """Total length of the interface polygon."""
    e = mesh.vertices[mesh.interface_edges[:, 1]] - mesh.vertices[mesh.interface_edges[:, 0]]
    return float(np.hypot(e[:, 0], e[:, 1]).sum())


def region_area(mesh: MeshGeometry, region: int) -> float:
    return float(mesh.triangle_areas()[mesh.regions == region].sum())


# -- plain-text format ------------------------------------------------------------


def write_mesh(mesh: MeshGeometry, path) -> None:
    lines = ["emesh 1", f"vertices {len(mesh.vertices)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {len(mesh.triangles)}")
    lines += [f"{a} {b} {c} {REGION_NAMES[int(r)]}" for (a, b, c), r in zip(mesh.triangles.tolist(), mesh.regions)]
    lines.append(f"interface {len(mesh.interface_edges)}")
    lines += [f"{a} {b}" for a, b in mesh.interface_edges.tolist()]
    if mesh.periodic:
        lines.append(f"periodic {len(mesh.periodic_pairs)}")
        lines += [f"{s} {m}" for s, m in mesh.periodic_pairs.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def _tokens(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        col = 0
        toks = []
        for word in line.split():
            col = line.index(word, col)
            toks.append((word, col + 1))
            col += len(word)
        if toks:
            yield lineno, toks


def import_mesh(path) -> MeshGeometry:
    """Read a mesh in the ``emesh 1`` text format and validate it."""
    rows = list(_tokens(Path(path).read_text()))
    pos = 0

    def next_row():
        nonlocal pos
        if pos >= len(rows):
            last = rows[-1][0] if rows else 0
            raise MeshParseError(last + 1, 1, "unexpected end of file")
        r = rows[pos]
        pos += 1
        return r

    def header(name, optional=False):
        nonlocal pos
        if optional and pos >= len(rows):
            return None
        lineno, toks = next_row()
        if toks[0][0] != name or len(toks) != 2:
            if optional:
                pos -= 1
                return None
            raise MeshParseError(lineno, toks[0][1], f"expected '{name} <count>'")
        return _int(lineno, toks[1])

    def _int(lineno, tok):
        try:
            return int(tok[0])
        except ValueError:
            raise MeshParseError(lineno, tok[1], f"expected an integer, got {tok[0]!r}") from None

    def _float(lineno, tok):
        try:
            return float(tok[0])
        except ValueError:
            raise MeshParseError(lineno, tok[1], f"expected a number, got {tok[0]!r}") from None

    lineno, toks = next_row()
    if [t for t, _ in toks] != ["emesh", "1"]:
        raise MeshParseError(lineno, 1, "expected header 'emesh 1'")

    nv = header("vertices")
    verts = []
    for _ in range(nv):
        lineno, toks = next_row()
        if len(toks) != 2:
            raise MeshParseError(lineno, 1, "vertex line needs 'x y'")
        verts.append((_float(lineno, toks[0]), _float(lineno, toks[1])))

    nt = header("triangles")
    tris, regs = [], []
    for k in range(nt):
        lineno, toks = next_row()
        if len(toks) < 4:
            raise MeshParseError(lineno, 1, f"triangle {k}: region tag missing")
        if len(toks) > 4:
            raise MeshParseError(lineno, toks[4][1], f"triangle {k}: unexpected token")
        ids = [_int(lineno, t) for t in toks[:3]]
        for v, t in zip(ids, toks[:3]):
            if not 0 <= v < nv:
                raise MeshParseError(lineno, t[1], f"triangle {k} references vertex {v} outside 0..{nv - 1}")
        if toks[3][0] not in REGION_CODES:
            raise MeshParseError(lineno, toks[3][1], f"triangle {k}: unknown region {toks[3][0]!r}")
        tris.append(ids)
        regs.append(REGION_CODES[toks[3][0]])

    def pairs_block(count, what):
        out = []
        for k in range(count):
            lineno, toks = next_row()
            if len(toks) != 2:
                raise MeshParseError(lineno, 1, f"{what} {k}: expected two vertex ids")
            ids = [_int(lineno, t) for t in toks]
            for v, t in zip(ids, toks):
                if not 0 <= v < nv:
                    raise MeshParseError(lineno, t[1], f"{what} {k} references vertex {v} outside 0..{nv - 1}")
            out.append(ids)
        return out

    iface = pairs_block(header("interface"), "interface edge")
    npair = header("periodic", optional=True)
    pairs = pairs_block(npair, "periodic pair") if npair else []
    if pos < len(rows):
        lineno, toks = rows[pos]
        raise MeshParseError(lineno, toks[0][1], f"unexpected content {toks[0][0]!r}")
    return MeshGeometry.from_arrays(verts, tris, regs, iface, pairs)
