import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from electroperm.mesh import (
    EXTRA,
    INTRA,
    GeometryError,
    GeometrySpec,
    MeshError,
    MeshGeometry,
    MeshParseError,
    generate_mesh,
    import_mesh,
    interface_measure,
    region_area,
    write_mesh,
)


def test_interface_nodes_on_circle(mesh05):
    d = np.hypot(*(mesh05.vertices[mesh05.interface_nodes] - 0.5).T)
    assert np.abs(d - 0.25).max() <= 1e-10


def test_intra_area(mesh05):
    assert region_area(mesh05, INTRA) == pytest.approx(math.pi * 0.25**2, rel=0.02)
    assert region_area(mesh05, INTRA) + region_area(mesh05, EXTRA) == pytest.approx(1.0, abs=1e-12)


def test_periodic_pairs_match(mesh05):
    v = mesh05.vertices
    left = np.flatnonzero(np.abs(v[:, 0]) < 1e-12)
    pairs = {int(s): int(m) for s, m in mesh05.periodic_pairs}
    for i in np.flatnonzero(np.abs(v[:, 0] - 1.0) < 1e-12):
        # slave on x = 1, master on x = 0 at the same height (corners go to the origin)
        m = pairs[int(i)]
        assert abs(v[m, 0]) < 1e-12
        if abs(v[i, 1]) > 1e-12 and abs(v[i, 1] - 1) > 1e-12:
            assert abs(v[m, 1] - v[i, 1]) <= 1e-10
    assert len(left) > 0
    for i in np.flatnonzero(np.abs(v[:, 1] - 1.0) < 1e-12):
        m = pairs[int(i)]
        assert abs(v[m, 1]) < 1e-12


def test_interface_length(mesh05):
    assert interface_measure(mesh05) == pytest.approx(2 * math.pi * 0.25, rel=0.01)


def test_refinement_orders():
    hs = [0.1, 0.05, 0.025]
    area_err, len_err = [], []
    for h in hs:
        m = generate_mesh(GeometrySpec(target_h=h))
        area_err.append(abs(region_area(m, INTRA) - math.pi / 16))
        len_err.append(abs(interface_measure(m) - math.pi / 2))
    for err in (area_err, len_err):
        assert err[0] > err[1] > err[2]
        order = np.polyfit(np.log(hs), np.log(err), 1)[0]
        assert order >= 1.8


def test_structure(mesh05):
    m = mesh05
    th = m.interface_theta
    assert (np.diff(th) > 0).all()
    assert -math.pi < th[0] and th[-1] <= math.pi
    gaps = np.diff(np.concatenate([th, [th[0] + 2 * math.pi]]))
    assert gaps.max() <= 3 * 0.05 / 0.25
    assert m.max_edge_length() <= 2 * 0.05
    assert (m.triangle_areas() > 1e-14).all()
    # every interface edge has one intra and one extra neighbour
    owner = {}
    for t, (a, b, c) in enumerate(m.triangles):
        for e in ((a, b), (b, c), (c, a)):
            owner[e] = m.regions[t]
    for a, b in m.interface_edges:
        assert owner[(a, b)] == INTRA and owner[(b, a)] == EXTRA
    # normals point away from the centre
    mid = m.vertices[m.interface_edges].mean(axis=1) - 0.5
    assert ((mid * m.interface_normals).sum(axis=1) > 0).all()


def test_dof_maps_are_bijections(mesh05):
    m = mesh05
    intra = m.intra_dof[m.intra_dof >= 0]
    assert sorted(intra) == list(range(m.n_intra))
    assert sorted(set(m.extra_dof[m.extra_dof >= 0])) == list(range(m.n_extra))
    tr = m.trace_dof[m.trace_dof >= 0]
    assert sorted(tr) == list(range(m.n_trace))
    iface = m.interface_nodes
    assert (m.intra_dof[iface] >= 0).all() and (m.extra_dof[iface] >= 0).all()
    # only periodic slaves share an extra dof
    slaves = set(m.periodic_pairs[:, 0].tolist())
    masters = np.flatnonzero(m.extra_dof >= 0)
    masters = [i for i in masters if i not in slaves]
    assert len(set(m.extra_dof[masters])) == len(masters) == m.n_extra


def test_infeasible_geometry():
    with pytest.raises(GeometryError) as e:
        generate_mesh(GeometrySpec(cell_radius=0.49, target_h=0.02))
    assert e.value.invariant == "cell_inside_domain"
    with pytest.raises(GeometryError) as e:
        generate_mesh(GeometrySpec(target_h=0.2))
    assert e.value.invariant == "interface_resolution"


def test_off_centre_cell():
    m = generate_mesh(GeometrySpec(cell_center=(0.45, 0.55), cell_radius=0.2, target_h=0.05))
    assert region_area(m, INTRA) == pytest.approx(math.pi * 0.04, rel=0.02)
    assert m.cell_center == pytest.approx([0.45, 0.55])


def test_round_trip(tmp_path, mesh05):
    p = tmp_path / "m.emesh"
    write_mesh(mesh05, p)
    back = import_mesh(p)
    for name in ("vertices", "triangles", "regions", "interface_edges", "periodic_pairs", "interface_theta", "extra_dof"):
        assert np.array_equal(getattr(back, name), getattr(mesh05, name))


def test_out_of_range_vertex(tmp_path, mesh05):
    p = tmp_path / "m.emesh"
    write_mesh(mesh05, p)
    lines = p.read_text().splitlines()
    start = lines.index(f"triangles {len(mesh05.triangles)}")
    lines[start + 4] = "0 1 999999 intra"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(MeshParseError) as e:
        import_mesh(p)
    assert "triangle 3" in str(e.value)
    assert e.value.line == start + 5


def test_missing_region_tag(tmp_path, mesh05):
    p = tmp_path / "m.emesh"
    write_mesh(mesh05, p)
    lines = p.read_text().splitlines()
    start = lines.index(f"triangles {len(mesh05.triangles)}")
    lines[start + 1] = " ".join(lines[start + 1].split()[:3])
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(MeshParseError, match="region tag missing"):
        import_mesh(p)


def test_bad_token_reports_column(tmp_path):
    p = tmp_path / "m.emesh"
    p.write_text("emesh 1\nvertices 1\n0.0 abc\n")
    with pytest.raises(MeshParseError) as e:
        import_mesh(p)
    assert (e.value.line, e.value.column) == (3, 5)


def test_interface_between_two_intra_triangles(mesh05):
    m = mesh05
    regions = m.regions.copy()
    # find the extra triangle on the outer side of the first interface edge and relabel it
    a, b = m.interface_edges[0]
    for t, tri in enumerate(m.triangles):
        cyc = list(tri) + [tri[0]]
        if any((cyc[i], cyc[i + 1]) == (b, a) for i in range(3)):
            regions[t] = INTRA
    with pytest.raises(MeshError) as e:
        MeshGeometry.from_arrays(m.vertices, m.triangles, regions, m.interface_edges, m.periodic_pairs)
    assert e.value.invariant in ("interface_two_sided", "interface_edges")


def test_clockwise_triangle_rejected(mesh05):
    m = mesh05
    tris = m.triangles.copy()
    tris[0] = tris[0][::-1]
    with pytest.raises(MeshError) as e:
        MeshGeometry.from_arrays(m.vertices, tris, m.regions, m.interface_edges, m.periodic_pairs)
    assert e.value.invariant == "counterclockwise"


@settings(max_examples=15, deadline=None)
@given(
    cx=st.floats(0.4, 0.6),
    cy=st.floats(0.4, 0.6),
    r=st.floats(0.12, 0.28),
    h=st.sampled_from([0.04, 0.05, 0.06]),
)
def test_generated_meshes_are_valid(cx, cy, r, h):
    spec = GeometrySpec(cell_center=(cx, cy), cell_radius=r, target_h=h)
    try:
        spec.validate()
    except GeometryError:
        return
    m = generate_mesh(spec)
    d = np.hypot(*(m.vertices[m.interface_nodes] - (cx, cy)).T)
    assert np.abs(d - r).max() <= 1e-10 * r
    assert (np.diff(m.interface_theta) > 0).all()
    assert m.max_edge_length() <= 2 * h
    assert region_area(m, INTRA) + region_area(m, EXTRA) == pytest.approx(1.0, abs=1e-12)
