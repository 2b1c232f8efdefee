"""Mesh generation, partitioning, extension, skeleton and file I/O."""

import numpy as np
import pytest

from hybridmor import mesh as hmesh


def test_structured_mesh_counts_2d():
    m = hmesh.generate_structured_mesh(2, 3)
    assert m.num_vertices == 16
    assert m.num_elements == 18
    assert len(m.boundary_facets) == 12


def test_structured_mesh_counts_3d():
    m = hmesh.generate_structured_mesh(3, 2)
    assert m.num_vertices == 27
    assert m.num_elements == 48
    assert len(m.boundary_facets) == 48


@pytest.mark.parametrize("dim,div", [(2, 3), (3, 2)])
def test_volumes_positive_and_fill_unit_domain(dim, div):
    m = hmesh.generate_structured_mesh(dim, div)
    vols = hmesh.element_volumes(m.vertices, m.elements)
    assert (vols > 0).all()
    assert abs(vols.sum() - 1.0) < 1e-12


def test_element_diameters_and_min_edge():
    m2 = hmesh.generate_structured_mesh(2, 4)
    np.testing.assert_allclose(
        hmesh.element_diameters(m2.vertices, m2.elements),
        np.sqrt(2.0) / 4, rtol=1e-12)
    assert abs(hmesh.min_edge_length(m2) - 0.25) < 1e-12

    m3 = hmesh.generate_structured_mesh(3, 2)
    np.testing.assert_allclose(
        hmesh.element_diameters(m3.vertices, m3.elements),
        np.sqrt(3.0) / 2, rtol=1e-12)
    assert abs(hmesh.min_edge_length(m3) - 0.5) < 1e-12


@pytest.mark.parametrize("dim,div", [(2, 3), (3, 2)])
def test_boundary_facets_point_outward(dim, div):
    m = hmesh.generate_structured_mesh(dim, div)
    owners = {}
    for e, cell in enumerate(m.elements):
        s = set(cell)
        for f in m.boundary_facets:
            if set(f) <= s:
                owners[tuple(sorted(f))] = e
    for f in m.boundary_facets:
        own = owners[tuple(sorted(f))]
        pts = m.vertices[f]
        if dim == 2:
            t = pts[1] - pts[0]
            normal = np.array([t[1], -t[0]])
        else:
            normal = np.cross(pts[1] - pts[0], pts[2] - pts[0])
        outward = pts.mean(axis=0) - m.vertices[m.elements[own]].mean(axis=0)
        assert normal @ outward > 0


def test_facet_incidence_counts():
    m = hmesh.generate_structured_mesh(3, 2)
    inc = hmesh.facet_incidence(m.elements, 3)
    counts = np.array([len(v) for v in inc.values()])
    assert set(counts) == {1, 2}
    assert (counts == 1).sum() == len(m.boundary_facets)
    # every element contributes dim+1 facet slots
    assert counts.sum() == 4 * m.num_elements


def test_rcb_partition_balanced_and_deterministic():
    m = hmesh.generate_structured_mesh(2, 4)
    p1 = hmesh.partition_elements(m, 4)
    p2 = hmesh.partition_elements(m, 4)
    np.testing.assert_array_equal(p1.part_of, p2.part_of)
    sizes = [c.size for c in p1.core]
    assert max(sizes) - min(sizes) <= 1
    assert sum(sizes) == m.num_elements
    for i, c in enumerate(p1.core):
        assert (p1.part_of[c] == i).all()
    # h is the max element diameter within each core
    np.testing.assert_allclose(p1.h, np.sqrt(2.0) / 4, rtol=1e-12)


def test_partition_degenerate_sizes():
    m = hmesh.generate_structured_mesh(2, 2)
    pall = hmesh.partition_elements(m, 1)
    assert pall.core[0].size == m.num_elements
    peach = hmesh.partition_elements(m, m.num_elements)
    assert all(c.size == 1 for c in peach.core)
    with pytest.raises(ValueError):
        hmesh.partition_elements(m, m.num_elements + 1)
    with pytest.raises(ValueError):
        hmesh.partition_elements(m, 0)


def test_partition_from_file(tmp_path):
    m = hmesh.generate_structured_mesh(2, 4)
    ref = hmesh.partition_elements(m, 4)
    path = tmp_path / "part.txt"
    np.savetxt(path, ref.part_of, fmt="%d")
    got = hmesh.partition_elements(m, 4, method="file", path=path)
    np.testing.assert_array_equal(got.part_of, ref.part_of)

    np.savetxt(path, ref.part_of[:-1], fmt="%d")
    with pytest.raises(ValueError, match="entries"):
        hmesh.partition_elements(m, 4, method="file", path=path)
    np.savetxt(path, np.full(m.num_elements, 7), fmt="%d")
    with pytest.raises(ValueError, match="ids"):
        hmesh.partition_elements(m, 4, method="file", path=path)
    with pytest.raises(ValueError, match="method"):
        hmesh.partition_elements(m, 4, method="metis")


def test_extension_zero_radius_is_core():
    m = hmesh.generate_structured_mesh(2, 4)
    part = hmesh.partition_elements(m, 4)
    part = hmesh.extend_subdomains(m, part, 0.0)
    for i in range(4):
        np.testing.assert_array_equal(part.ext[i], part.core[i])
    assert part.overlap == 1


def test_extension_vertex_distance_semantics():
    """r grows the set by all elements with a vertex strictly inside r."""
    m = hmesh.generate_structured_mesh(2, 4)
    part = hmesh.partition_elements(m, 16)
    hmin = hmesh.min_edge_length(m)

    def rings(core, r):
        # independent recomputation: min distance from element vertices
        # to the core vertex set
        cv = np.unique(m.elements[core])
        d = np.linalg.norm(
            m.vertices[:, None, :] - m.vertices[cv][None, :, :], axis=2
        ).min(axis=1)
        near = d[m.elements].min(axis=1) < r
        return np.union1d(np.flatnonzero(near), core)

    for r in (0.5 * hmin, hmin, 1.5 * hmin):
        part = hmesh.extend_subdomains(m, part, r)
        for i in (0, 5, 13):
            np.testing.assert_array_equal(part.ext[i],
                                          rings(part.core[i], r))
    # the inequality is strict: r equal to one edge length adds exactly
    # the vertex-sharing ring, same as any smaller positive radius
    a = hmesh.extend_subdomains(m, part, 0.5 * hmin).ext[5]
    b = hmesh.extend_subdomains(m, part, hmin).ext[5]
    c = hmesh.extend_subdomains(m, part, 1.000001 * hmin).ext[5]
    np.testing.assert_array_equal(a, b)
    assert c.size > b.size


def test_extension_overlap_counts():
    m = hmesh.generate_structured_mesh(2, 4)
    part = hmesh.partition_elements(m, 4)
    part = hmesh.extend_subdomains(m, part, 10.0)   # covers everything
    for i in range(4):
        assert part.ext[i].size == m.num_elements
    assert part.overlap == 4
    with pytest.raises(ValueError):
        hmesh.extend_subdomains(m, part, -1.0)


@pytest.mark.parametrize("dim,div,n", [(2, 4, 4), (3, 2, 4)])
def test_skeleton_matches_incidence(dim, div, n):
    m = hmesh.generate_structured_mesh(dim, div)
    part = hmesh.partition_elements(m, n)
    skel = hmesh.extract_skeleton(m, part)

    # sorted rows, lexicographic order, sound incidence labels
    np.testing.assert_array_equal(skel.facets, np.sort(skel.facets, axis=1))
    inner = skel.incident[~skel.on_outer]
    assert (inner[:, 0] < inner[:, 1]).all()
    assert (skel.incident[skel.on_outer, 1] == -1).all()

    # independent recount of the interior interface facets
    inc = hmesh.facet_incidence(m.elements, dim)
    expect = sorted(
        f for f, owners in inc.items()
        if len(owners) == 2 and part.part_of[owners[0]] != part.part_of[owners[1]])
    got = sorted(map(tuple, skel.facets[~skel.on_outer]))
    assert got == expect
    # outer facets are exactly the mesh boundary
    assert sorted(map(tuple, skel.facets[skel.on_outer])) == \
        sorted(tuple(sorted(f)) for f in m.boundary_facets)


def test_submesh_roundtrip_and_boundary_restriction():
    m = hmesh.generate_structured_mesh(3, 2)
    part = hmesh.partition_elements(m, 4)
    part = hmesh.extend_subdomains(m, part, 0.6)
    elems = part.ext[1]
    local, vert_map = hmesh.submesh(m, elems)
    assert (np.diff(vert_map) > 0).all()
    np.testing.assert_array_equal(vert_map[local.elements], m.elements[elems])
    hmesh.validate_mesh(local)

    global_bnd = {tuple(sorted(f)) for f in m.boundary_facets}
    mapped = {tuple(sorted(vert_map[f])) for f in local.boundary_facets}
    assert mapped <= global_bnd
    # every global boundary facet owned by a subset element is kept
    subset = set(elems.tolist())
    inc = hmesh.facet_incidence(m.elements, 3)
    expect = {f for f, owners in inc.items()
              if len(owners) == 1 and owners[0] in subset and f in global_bnd}
    assert mapped == expect


@pytest.mark.parametrize("dim,div", [(2, 3), (3, 2)])
def test_msh_roundtrip(dim, div, tmp_path):
    m = hmesh.generate_structured_mesh(dim, div)
    path = tmp_path / "mesh.msh"
    hmesh.write_msh(m, path)
    back = hmesh.read_msh(path)
    assert back.dim == dim
    np.testing.assert_allclose(back.vertices, m.vertices, atol=0)
    assert sorted(map(tuple, np.sort(back.elements, axis=1))) == \
        sorted(map(tuple, np.sort(m.elements, axis=1)))
    assert (hmesh.element_volumes(back.vertices, back.elements) > 0).all()


def test_read_msh_fixes_orientation_and_orphans(tmp_path):
    path = tmp_path / "m.msh"
    # one positively and one negatively oriented triangle, plus an
    # unused node and a re-based node numbering
    path.write_text("\n".join([
        "$MeshFormat", "2.2 0 8", "$EndMeshFormat",
        "$Nodes", "5",
        "10 0 0 0", "11 1 0 0", "12 0 1 0", "13 1 1 0", "14 5 5 0",
        "$EndNodes",
        "$Elements", "3",
        "1 2 0 10 11 12",
        "2 2 0 11 12 13",      # negative orientation on purpose
        "3 15 0 10",            # stray point element: ignored
        "$EndElements", ""]))
    m = hmesh.read_msh(path)
    assert m.num_vertices == 4          # orphan node dropped
    assert m.num_elements == 2
    assert (hmesh.element_volumes(m.vertices, m.elements) > 0).all()
    assert len(m.boundary_facets) == 4


@pytest.mark.parametrize("body,match", [
    ("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n", "version"),
    ("$MeshFormat\n2.2 1 8\n$EndMeshFormat\n", "binary"),
    ("$Nodes\n", "MeshFormat"),
])
def test_read_msh_rejects_bad_headers(tmp_path, body, match):
    path = tmp_path / "bad.msh"
    path.write_text(body)
    with pytest.raises(hmesh.MeshFormatError, match=match):
        hmesh.read_msh(path)


def test_read_msh_rejects_mixed_and_empty(tmp_path):
    head = ("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n"
            "$Nodes\n5\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n5 1 1 0\n"
            "$EndNodes\n$Elements\n%s$EndElements\n")
    path = tmp_path / "bad.msh"
    path.write_text(head % "2\n1 4 0 1 2 3 4\n2 2 0 1 2 5\n")
    with pytest.raises(hmesh.MeshFormatError, match="mixed"):
        hmesh.read_msh(path)
    path.write_text(head % "1\n1 15 0 1\n")
    with pytest.raises(hmesh.MeshFormatError, match="no volume"):
        hmesh.read_msh(path)
    path.write_text(head % "1\n1 7 0 1 2 3 4 5\n")
    with pytest.raises(hmesh.MeshFormatError, match="unsupported element"):
        hmesh.read_msh(path)
