"""Simplicial meshes, partitions, subdomain extensions and the skeleton.

Meshes are plain vertex/element arrays over triangles (2D) or tetrahedra
(3D).  Structured generators split the unit square into two triangles per
cell and the unit cube into six tetrahedra per cell (Kuhn split, all
positively oriented).  Unstructured meshes come from Gmsh v2.2 ASCII files.

A Partition assigns every element to exactly one core subdomain; extended
element sets are grown geometrically by a vertex-distance predicate.  The
skeleton is the set of facets separating different subdomains, plus the
outer-boundary facets flagged as such.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)


class MeshFormatError(Exception):
    """Raised for malformed or unsupported mesh files."""


@dataclass
class Mesh:
    """Simplicial mesh.

    vertices: (nv, dim) float coordinates.
    elements: (ne, dim+1) int vertex indices, positively oriented.
    boundary_facets: (nb, dim) int vertex indices, outward oriented
        (facet normal points out of the owning element).
    """

    dim: int
    vertices: np.ndarray
    elements: np.ndarray
    boundary_facets: np.ndarray

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_elements(self) -> int:
        return self.elements.shape[0]


@dataclass
class Partition:
    """Element-to-subdomain assignment with optional geometric extensions."""

    n: int
    part_of: np.ndarray                 # (ne,) subdomain id per element
    core: list[np.ndarray]              # element ids per subdomain
    h: np.ndarray                       # max element diameter per core
    r: float | None = None              # extension radius actually used
    ext: list[np.ndarray] | None = None # extended element sets
    overlap: int | None = None          # max #extended sets sharing an element


@dataclass
class Skeleton:
    """Facets of subdomain boundaries.

    facets: (nf, dim) vertex ids in ascending order.
    incident: (nf, 2) subdomain pair (i, j) with i < j, or (i, -1) for
        facets on the outer boundary.
    on_outer: (nf,) bool, True for outer-boundary facets.
    """

    facets: np.ndarray
    incident: np.ndarray
    on_outer: np.ndarray


def element_volumes(vertices: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Signed simplex volumes (areas in 2D)."""
    v0 = vertices[elements[:, 0]]
    edges = vertices[elements[:, 1:]] - v0[:, None, :]
    det = np.linalg.det(edges)
    dim = vertices.shape[1]
    return det / (2.0 if dim == 2 else 6.0)


def element_diameters(vertices: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Max pairwise vertex distance per element."""
    pts = vertices[elements]                       # (ne, k, dim)
    diff = pts[:, :, None, :] - pts[:, None, :, :]
    return np.sqrt((diff ** 2).sum(-1)).max(axis=(1, 2))


def min_edge_length(mesh: Mesh) -> float:
    pts = mesh.vertices[mesh.elements]
    diff = pts[:, :, None, :] - pts[:, None, :, :]
    d = np.sqrt((diff ** 2).sum(-1))
    k = mesh.elements.shape[1]
    iu = np.triu_indices(k, 1)
    return float(d[:, iu[0], iu[1]].min())


def _fix_orientation(vertices: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Swap the last two vertices of negatively oriented elements."""
    vol = element_volumes(vertices, elements)
    bad = vol < 0
    if bad.any():
        elements = elements.copy()
        elements[bad, -1], elements[bad, -2] = (
            elements[bad, -2].copy(), elements[bad, -1].copy())
    if (element_volumes(vertices, elements) <= 0).any():
        raise MeshFormatError("degenerate element (zero volume)")
    return elements


def local_facets(dim: int) -> np.ndarray:
    """Vertex index pattern of the facets of the reference simplex."""
    if dim == 2:
        return np.array([[1, 2], [0, 2], [0, 1]])
    return np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


def facet_incidence(elements: np.ndarray, dim: int) -> dict[tuple, list[int]]:
    """Map sorted facet vertex tuple -> incident element ids (1 or 2)."""
    pattern = local_facets(dim)
    inc: dict[tuple, list[int]] = {}
    facets = np.sort(elements[:, pattern], axis=2)   # (ne, dim+1, dim)
    for e in range(elements.shape[0]):
        for f in facets[e]:
            inc.setdefault(tuple(f), []).append(e)
    return inc


def _orient_outward(vertices, elements, facet, owner) -> np.ndarray:
    """Order facet vertices so the normal points out of the owner element."""
    facet = np.asarray(facet)
    opp = np.setdiff1d(elements[owner], facet)[0]
    p = vertices[facet]
    if vertices.shape[1] == 2:
        t = p[1] - p[0]
        normal = np.array([t[1], -t[0]])
    else:
        normal = np.cross(p[1] - p[0], p[2] - p[0])
    if np.dot(normal, p[0] - vertices[opp]) < 0:
        facet = facet.copy()
        facet[-1], facet[-2] = facet[-2].copy(), facet[-1].copy()
    return facet


def boundary_facets_from_incidence(vertices, elements, dim) -> np.ndarray:
    inc = facet_incidence(elements, dim)
    out = []
    for f, owners in inc.items():
        if len(owners) == 1:
            out.append(_orient_outward(vertices, elements, f, owners[0]))
        elif len(owners) > 2:
            raise MeshFormatError(
                f"facet {f} shared by {len(owners)} elements (non-conforming mesh)")
    if not out:
        return np.empty((0, dim), dtype=elements.dtype)
    out = np.array(out)
    order = np.lexsort(np.sort(out, axis=1).T[::-1])
    return out[order]


def validate_mesh(mesh: Mesh) -> None:
    """Check orientation and facet conformity; raise on violation."""
    if (element_volumes(mesh.vertices, mesh.elements) <= 0).any():
        raise MeshFormatError("element with non-positive volume")
    inc = facet_incidence(mesh.elements, mesh.dim)
    bnd = {tuple(sorted(f)) for f in mesh.boundary_facets}
    for f, owners in inc.items():
        if len(owners) > 2:
            raise MeshFormatError(f"facet {f} shared by {len(owners)} elements")
        if (len(owners) == 1) != (f in bnd):
            raise MeshFormatError(f"boundary facet set inconsistent at {f}")


def generate_structured_mesh(dim: int, divisions: int) -> Mesh:
    """Uniform mesh of the unit square/cube with `divisions` cells per axis."""
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    if divisions < 1:
        raise ValueError("divisions must be >= 1")
    N = divisions
    side = np.linspace(0.0, 1.0, N + 1)
    if dim == 2:
        X, Y = np.meshgrid(side, side, indexing="ij")
        vertices = np.column_stack([X.ravel(), Y.ravel()])
        vid = np.arange((N + 1) ** 2).reshape(N + 1, N + 1)
        v00 = vid[:-1, :-1].ravel()
        v10 = vid[1:, :-1].ravel()
        v01 = vid[:-1, 1:].ravel()
        v11 = vid[1:, 1:].ravel()
        tri1 = np.column_stack([v00, v10, v11])
        tri2 = np.column_stack([v00, v11, v01])
        elements = np.stack([tri1, tri2], axis=1).reshape(-1, 3)
    else:
        X, Y, Z = np.meshgrid(side, side, side, indexing="ij")
        vertices = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
        vid = np.arange((N + 1) ** 3).reshape(N + 1, N + 1, N + 1)
        c000 = vid[:-1, :-1, :-1].ravel()
        strides = np.array([(N + 1) ** 2, N + 1, 1])
        # Kuhn split: six tets along vertex-ordered paths 0 -> e_a -> e_a+e_b -> (1,1,1)
        tets = []
        for perm in itertools.permutations(range(3)):
            a = strides[perm[0]]
            b = strides[perm[1]]
            tets.append(np.column_stack(
                [c000, c000 + a, c000 + a + b, c000 + strides.sum()]))
        elements = np.stack(tets, axis=1).reshape(-1, 4)
    elements = _fix_orientation(vertices, elements)
    bnd = boundary_facets_from_incidence(vertices, elements, dim)
    return Mesh(dim, vertices, elements, bnd)


def read_msh(path) -> Mesh:
    """Read a Gmsh v2.2 ASCII file with triangle or tet volume elements."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    i = 0

    def expect(tag):
        nonlocal i
        while i < len(lines) and not lines[i].strip():
            i += 1
        if i >= len(lines) or lines[i].strip() != tag:
            raise MeshFormatError(f"line {i + 1}: expected {tag}")
        i += 1

    expect("$MeshFormat")
    parts = lines[i].split()
    if not parts or parts[0] not in ("2.2", "2"):
        raise MeshFormatError(f"line {i + 1}: unsupported msh version {lines[i]!r}")
    if len(parts) > 1 and parts[1] != "0":
        raise MeshFormatError(f"line {i + 1}: binary msh not supported")
    i += 1
    expect("$EndMeshFormat")

    expect("$Nodes")
    try:
        n_nodes = int(lines[i])
    except ValueError:
        raise MeshFormatError(f"line {i + 1}: bad node count {lines[i]!r}")
    i += 1
    coords = np.empty((n_nodes, 3))
    id_map = {}
    for k in range(n_nodes):
        parts = lines[i + k].split()
        if len(parts) != 4:
            raise MeshFormatError(f"line {i + k + 1}: bad node line")
        id_map[int(parts[0])] = k
        coords[k] = [float(x) for x in parts[1:]]
    i += n_nodes
    expect("$EndNodes")

    expect("$Elements")
    try:
        n_elem = int(lines[i])
    except ValueError:
        raise MeshFormatError(f"line {i + 1}: bad element count {lines[i]!r}")
    i += 1
    tris, tets = [], []
    for k in range(n_elem):
        parts = lines[i + k].split()
        if len(parts) < 3:
            raise MeshFormatError(f"line {i + k + 1}: bad element line")
        etype = int(parts[1])
        ntags = int(parts[2])
        nodes = [int(x) for x in parts[3 + ntags:]]
        if etype == 2:
            if len(nodes) != 3:
                raise MeshFormatError(f"line {i + k + 1}: triangle needs 3 nodes")
            tris.append(nodes)
        elif etype == 4:
            if len(nodes) != 4:
                raise MeshFormatError(f"line {i + k + 1}: tet needs 4 nodes")
            tets.append(nodes)
        elif etype in (1, 15):
            continue                    # boundary lines / points: inferred instead
        else:
            raise MeshFormatError(
                f"line {i + k + 1}: unsupported element type {etype} "
                "(only 3-node triangles and 4-node tets)")
    i += n_elem
    expect("$EndElements")

    if tris and tets:
        raise MeshFormatError("mixed triangle and tet volume elements")
    if not tris and not tets:
        raise MeshFormatError("no volume elements found")
    dim = 3 if tets else 2
    raw = np.array(tets if tets else tris, dtype=np.int64)
    remap = np.vectorize(id_map.__getitem__, otypes=[np.int64])
    elements = remap(raw)
    vertices = coords[:, :dim].copy()
    used = np.unique(elements)
    if used.size != vertices.shape[0]:
        # drop orphan nodes, renumber densely
        new_id = -np.ones(vertices.shape[0], dtype=np.int64)
        new_id[used] = np.arange(used.size)
        vertices = vertices[used]
        elements = new_id[elements]
    elements = _fix_orientation(vertices, elements)
    bnd = boundary_facets_from_incidence(vertices, elements, dim)
    mesh = Mesh(dim, vertices, elements, bnd)
    validate_mesh(mesh)
    return mesh


def write_msh(mesh: Mesh, path) -> None:
    """Write a Gmsh v2.2 ASCII file (volume elements only)."""
    etype = 2 if mesh.dim == 2 else 4
    with open(path, "w") as fh:
        fh.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
        fh.write(f"$Nodes\n{mesh.num_vertices}\n")
        for k, v in enumerate(mesh.vertices):
            x, y = float(v[0]), float(v[1])
            z = float(v[2]) if mesh.dim == 3 else 0.0
            fh.write(f"{k + 1} {x!r} {y!r} {z!r}\n")
        fh.write(f"$EndNodes\n$Elements\n{mesh.num_elements}\n")
        for k, e in enumerate(mesh.elements):
            nodes = " ".join(str(v + 1) for v in e)
            fh.write(f"{k + 1} {etype} 2 0 0 {nodes}\n")
        fh.write("$EndElements\n")


def _rcb(centroids: np.ndarray, ids: np.ndarray, n: int,
         label0: int, part_of: np.ndarray) -> None:
    if n == 1:
        part_of[ids] = label0
        return
    nl = n // 2
    nr = n - nl
    c = centroids[ids]
    extent = c.max(axis=0) - c.min(axis=0)
    axis = int(np.argmax(extent))       # ties resolve to the lowest axis
    order = np.lexsort((ids, c[:, axis]))
    k = int(round(len(ids) * nl / n))
    k = min(max(k, 1), len(ids) - 1)
    _rcb(centroids, ids[order[:k]], nl, label0, part_of)
    _rcb(centroids, ids[order[k:]], nr, label0 + nl, part_of)


def partition_elements(mesh: Mesh, n: int, method: str = "rcb",
                       path=None) -> Partition:
    """Partition elements into n subdomains.

    method "rcb": recursive coordinate bisection of element centroids,
    median split along the longest bounding-box axis, deterministic
    (ties broken by element id).  method "file": one subdomain id per
    line, one line per element.
    """
    ne = mesh.num_elements
    if n < 1 or n > ne:
        raise ValueError(f"need 1 <= n <= #elements, got n={n}, ne={ne}")
    if method == "rcb":
        centroids = mesh.vertices[mesh.elements].mean(axis=1)
        part_of = -np.ones(ne, dtype=np.int64)
        _rcb(centroids, np.arange(ne), n, 0, part_of)
    elif method == "file":
        data = np.loadtxt(path, dtype=np.int64, ndmin=1)
        if data.shape != (ne,):
            raise ValueError(
                f"partition file has {data.shape[0]} entries, mesh has {ne} elements")
        if data.min() < 0 or data.max() >= n:
            raise ValueError("partition ids must lie in [0, n)")
        part_of = data
    else:
        raise ValueError(f"unknown partition method {method!r}")
    core = [np.flatnonzero(part_of == i) for i in range(n)]
    for i, c in enumerate(core):
        if c.size == 0:
            log.warning("subdomain %d is empty", i)
    h = np.array([
        element_diameters(mesh.vertices, mesh.elements[c]).max() if c.size else 0.0
        for c in core])
    return Partition(n=n, part_of=part_of, core=core, h=h)


def extend_subdomains(mesh: Mesh, partition: Partition, r: float) -> Partition:
    """Grow each core by all elements within vertex distance < r of it."""
    if r < 0:
        raise ValueError("extension radius must be >= 0")
    ext = []
    counts = np.zeros(mesh.num_elements, dtype=np.int64)
    for i in range(partition.n):
        core = partition.core[i]
        if r == 0.0 or core.size == 0:
            e = core.copy()
        else:
            cv = np.unique(mesh.elements[core])
            tree = cKDTree(mesh.vertices[cv])
            dmin, _ = tree.query(mesh.vertices)
            near = dmin[mesh.elements].min(axis=1) < r
            e = np.union1d(np.flatnonzero(near), core)
        ext.append(e)
        counts[e] += 1
    partition.ext = ext
    partition.r = r
    partition.overlap = int(counts.max()) if mesh.num_elements else 0
    return partition


def extract_skeleton(mesh: Mesh, partition: Partition) -> Skeleton:
    """Facets between different subdomains plus outer-boundary facets."""
    inc = facet_incidence(mesh.elements, mesh.dim)
    part = partition.part_of
    fac, pairs, outer = [], [], []
    for f, owners in inc.items():
        if len(owners) == 2:
            i, j = part[owners[0]], part[owners[1]]
            if i != j:
                fac.append(f)
                pairs.append((min(i, j), max(i, j)))
                outer.append(False)
        elif len(owners) == 1:
            fac.append(f)
            pairs.append((part[owners[0]], -1))
            outer.append(True)
        else:
            raise MeshFormatError(f"facet {f} shared by {len(owners)} elements")
    if not fac:
        return Skeleton(np.empty((0, mesh.dim), dtype=np.int64),
                        np.empty((0, 2), dtype=np.int64),
                        np.empty(0, dtype=bool))
    fac = np.array(fac, dtype=np.int64)
    order = np.lexsort(fac.T[::-1])
    return Skeleton(fac[order], np.array(pairs, dtype=np.int64)[order],
                    np.array(outer)[order])


def submesh(mesh: Mesh, elems: np.ndarray) -> tuple[Mesh, np.ndarray]:
    """Extract the mesh over an element subset.

    Returns (local mesh, vert_map) where vert_map[k] is the global vertex
    id of local vertex k.  Local boundary facets are the restriction of
    the global boundary facets to the subset.
    """
    elems = np.asarray(elems)
    vert_map = np.unique(mesh.elements[elems])
    new_id = -np.ones(mesh.num_vertices, dtype=np.int64)
    new_id[vert_map] = np.arange(vert_map.size)
    local_elems = new_id[mesh.elements[elems]]
    keep = np.all(new_id[mesh.boundary_facets] >= 0, axis=1)
    local_bnd = new_id[mesh.boundary_facets[keep]]
    # keep only facets actually on the submesh surface
    inc = facet_incidence(local_elems, mesh.dim)
    local_bnd = np.array(
        [f for f in local_bnd if tuple(sorted(f)) in inc],
        dtype=np.int64).reshape(-1, mesh.dim)
    local = Mesh(mesh.dim, mesh.vertices[vert_map].copy(), local_elems, local_bnd)
    return local, vert_map
