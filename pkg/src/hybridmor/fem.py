"""Lagrange P1/P2 finite elements on simplices.

Quadrature rules are collapsed Gauss-Legendre products (Duffy transform),
so weights are positive and any polynomial exactness degree is available.
Assembly is vectorized over elements in chunks; matrices are returned over
the full DOF numbering of the DofMap, with Dirichlet elimination left to
the caller (slice with dofmap.free).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import roots_legendre

_CHUNK = 4096


# ---------------------------------------------------------------------------
# quadrature

def gauss_interval(degree: int):
    """Gauss-Legendre rule on [0, 1], exact for polynomials of `degree`."""
    n = max(1, (degree + 2) // 2)
    x, w = roots_legendre(n)
    return (x + 1.0) / 2.0, w / 2.0


def simplex_quadrature(dim: int, degree: int):
    """Positive-weight rule on the reference simplex, exact for `degree`.

    Built by collapsing a Gauss-Legendre product rule; the Jacobian of the
    collapse raises the polynomial degree in the leading axes, which the
    point counts account for.
    """
    if degree < 0:
        raise ValueError("degree must be >= 0")
    if dim == 1:
        x, w = gauss_interval(degree)
        return x[:, None], w
    if dim == 2:
        xu, wu = gauss_interval(degree + 1)
        xv, wv = gauss_interval(degree)
        U, V = np.meshgrid(xu, xv, indexing="ij")
        WU, WV = np.meshgrid(wu, wv, indexing="ij")
        x = U.ravel()
        y = (V * (1.0 - U)).ravel()
        w = (WU * WV * (1.0 - U)).ravel()
        return np.column_stack([x, y]), w
    if dim == 3:
        xu, wu = gauss_interval(degree + 2)
        xv, wv = gauss_interval(degree + 1)
        xw, ww = gauss_interval(degree)
        U, V, W = np.meshgrid(xu, xv, xw, indexing="ij")
        WU, WV, WW = np.meshgrid(wu, wv, ww, indexing="ij")
        x = U.ravel()
        y = (V * (1.0 - U)).ravel()
        z = (W * (1.0 - U) * (1.0 - V)).ravel()
        w = (WU * WV * WW * (1.0 - U) ** 2 * (1.0 - V)).ravel()
        return np.column_stack([x, y, z]), w
    raise ValueError("dim must be 1, 2 or 3")


# ---------------------------------------------------------------------------
# reference basis

def local_edges(dim: int) -> list[tuple[int, int]]:
    """Local vertex pairs carrying the P2 edge nodes, lexicographic."""
    if dim == 1:
        return [(0, 1)]
    if dim == 2:
        return [(0, 1), (0, 2), (1, 2)]
    return [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def num_basis(dim: int, p: int) -> int:
    if p == 1:
        return dim + 1
    if p == 2:
        return dim + 1 + len(local_edges(dim))
    raise ValueError("only p=1 and p=2 are supported")


def _barycentric(pts: np.ndarray):
    lam = np.empty((pts.shape[1] + 1, pts.shape[0]))
    lam[0] = 1.0 - pts.sum(axis=1)
    lam[1:] = pts.T
    return lam


def _bary_grads(dim: int) -> np.ndarray:
    g = np.zeros((dim + 1, dim))
    g[0] = -1.0
    g[1:] = np.eye(dim)
    return g


def shape_values(dim: int, p: int, pts: np.ndarray) -> np.ndarray:
    """Basis values, shape (nb, npts)."""
    lam = _barycentric(pts)
    if p == 1:
        return lam.copy()
    vals = [lam[i] * (2.0 * lam[i] - 1.0) for i in range(dim + 1)]
    vals += [4.0 * lam[a] * lam[b] for a, b in local_edges(dim)]
    return np.array(vals)


def shape_gradients(dim: int, p: int, pts: np.ndarray) -> np.ndarray:
    """Reference-coordinate gradients, shape (nb, npts, dim)."""
    lam = _barycentric(pts)
    g = _bary_grads(dim)
    if p == 1:
        return np.broadcast_to(g[:, None, :], (dim + 1, pts.shape[0], dim)).copy()
    grads = [(4.0 * lam[i] - 1.0)[:, None] * g[i] for i in range(dim + 1)]
    grads += [4.0 * (lam[a][:, None] * g[b] + lam[b][:, None] * g[a])
              for a, b in local_edges(dim)]
    return np.array(grads)


# ---------------------------------------------------------------------------
# DOF maps

def _lookup_edges(edge_keys: np.ndarray, edge_dofs: np.ndarray,
                  key: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(edge_keys, key)
    bad = (pos >= edge_keys.size)
    pos[bad] = 0
    miss = bad | (edge_keys[pos] != key)
    if miss.any():
        raise ValueError("facet edge not present in the DOF numbering")
    return edge_dofs[pos]


@dataclass
class DofMap:
    """Lagrange DOF numbering over an element subset.

    Vertices come first (ascending vertex id), then for p=2 the edge
    midpoints (ascending (min,max) vertex pair).  `dirichlet` collects the
    DOFs on the given Dirichlet facets; `free` is its complement.
    """

    dim: int
    p: int
    elems: np.ndarray            # element ids within the parent mesh
    element_dofs: np.ndarray     # (nelem, nb)
    ndof: int
    node_coords: np.ndarray      # (ndof, dim)
    vertex_dof: np.ndarray       # vertex id -> dof (or -1)
    edge_keys: np.ndarray        # sorted encoded (a,b) keys, p=2 only
    edge_dofs: np.ndarray
    edge_stride: int
    dirichlet: np.ndarray
    free: np.ndarray
    free_index: np.ndarray       # dof -> position in free (or -1)
    _owner_map: dict = field(default=None, repr=False)

    @property
    def n_free(self) -> int:
        return self.free.size

    def facet_dofs_many(self, facets: np.ndarray) -> np.ndarray:
        """DOFs on each facet: sorted vertices, then lexicographic edges."""
        facets = np.sort(np.asarray(facets), axis=1)
        nf, k = facets.shape
        cols = [self.vertex_dof[facets[:, j]] for j in range(k)]
        if self.p == 2:
            pairs = [(a, b) for a in range(k) for b in range(a + 1, k)]
            for a, b in pairs:
                key = facets[:, a] * self.edge_stride + facets[:, b]
                cols.append(_lookup_edges(self.edge_keys, self.edge_dofs, key))
        out = np.column_stack(cols)
        if (out < 0).any():
            raise ValueError("facet references vertices outside the element set")
        return out

    def facet_owners(self, mesh, facets: np.ndarray) -> np.ndarray:
        """Position (within this map's element list) of the unique owner."""
        if self._owner_map is None:
            from .mesh import facet_incidence
            self._owner_map = facet_incidence(mesh.elements[self.elems], self.dim)
        owners = np.empty(facets.shape[0], dtype=np.int64)
        for i, f in enumerate(np.sort(facets, axis=1)):
            own = self._owner_map.get(tuple(f))
            if own is None:
                raise ValueError(f"facet {tuple(f)} not found in element set")
            if len(own) != 1:
                raise ValueError(f"facet {tuple(f)} has ambiguous owner")
            owners[i] = own[0]
        return owners


def boundary_nodes(mesh):
    """Vertex ids and sorted edge pairs lying on the mesh boundary.

    Node-based Dirichlet detection: an element subset can touch the
    boundary at a single vertex or edge without owning a boundary facet,
    so facet-based marking would miss those DOFs.
    """
    bf = np.asarray(mesh.boundary_facets)
    if bf.size == 0:
        return (np.empty(0, dtype=np.int64), np.empty((0, 2), dtype=np.int64))
    verts = np.unique(bf)
    k = bf.shape[1]
    if k < 2:
        return verts, np.empty((0, 2), dtype=np.int64)
    srt = np.sort(bf, axis=1)
    pairs = np.vstack([srt[:, [a, b]] for a in range(k)
                       for b in range(a + 1, k)])
    pairs = np.unique(pairs, axis=0)
    return verts, pairs


def build_dofmap(mesh, elems, p: int, dirichlet_nodes=None) -> DofMap:
    """Number Lagrange DOFs over `elems`; Dirichlet DOFs from node sets.

    dirichlet_nodes is a (vertex ids, sorted edge pairs) tuple, defaulting
    to the nodes of the mesh boundary facets.
    """
    if p not in (1, 2):
        raise ValueError("only p=1 and p=2 are supported")
    elems = np.arange(mesh.num_elements) if elems is None else np.asarray(elems)
    cells = mesh.elements[elems]
    verts = np.unique(cells)
    nv = verts.size
    vertex_dof = -np.ones(mesh.num_vertices, dtype=np.int64)
    vertex_dof[verts] = np.arange(nv)

    stride = mesh.num_vertices
    if p == 2:
        le = np.array(local_edges(mesh.dim))
        pairs = np.sort(cells[:, le], axis=2).reshape(-1, 2)
        keys = pairs[:, 0] * stride + pairs[:, 1]
        edge_keys, inv = np.unique(keys, return_inverse=True)
        edge_dofs = nv + np.arange(edge_keys.size)
        element_dofs = np.concatenate(
            [vertex_dof[cells],
             edge_dofs[inv].reshape(cells.shape[0], le.shape[0])], axis=1)
        a = edge_keys // stride
        b = edge_keys % stride
        mid = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
        node_coords = np.vstack([mesh.vertices[verts], mid])
        ndof = nv + edge_keys.size
    else:
        edge_keys = np.empty(0, dtype=np.int64)
        edge_dofs = np.empty(0, dtype=np.int64)
        element_dofs = vertex_dof[cells]
        node_coords = mesh.vertices[verts].copy()
        ndof = nv

    dm = DofMap(mesh.dim, p, elems, element_dofs, ndof, node_coords,
                vertex_dof, edge_keys, edge_dofs, stride,
                np.empty(0, dtype=np.int64), np.arange(ndof), None)
    if dirichlet_nodes is None:
        dirichlet_nodes = boundary_nodes(mesh)
    bverts, bpairs = dirichlet_nodes
    con = []
    if len(bverts):
        vd = vertex_dof[np.asarray(bverts)]
        con.append(vd[vd >= 0])
    if p == 2 and len(bpairs) and edge_keys.size:
        bp = np.asarray(bpairs)
        keys = bp[:, 0] * stride + bp[:, 1]
        mask = np.isin(edge_keys, keys)
        con.append(edge_dofs[mask])
    if con:
        dm.dirichlet = np.unique(np.concatenate(con))
    dm.free = np.setdiff1d(np.arange(ndof), dm.dirichlet)
    dm.free_index = -np.ones(ndof, dtype=np.int64)
    dm.free_index[dm.free] = np.arange(dm.free.size)
    return dm


# ---------------------------------------------------------------------------
# element geometry

def _element_maps(mesh, cells: np.ndarray):
    """Affine maps: returns (v0, J, invJT, absdet) for a batch of cells."""
    pts = mesh.vertices[cells]
    v0 = pts[:, 0, :]
    J = np.swapaxes(pts[:, 1:, :] - v0[:, None, :], 1, 2)   # (ne, dim, dim)
    det = np.linalg.det(J)
    invJT = np.swapaxes(np.linalg.inv(J), 1, 2)
    return v0, J, invJT, np.abs(det)


def _scatter(ndof_r, ndof_c, rows, cols, vals) -> sp.csr_matrix:
    rows = rows.ravel()
    cols = cols.ravel()
    vals = vals.ravel()
    keep = (rows >= 0) & (cols >= 0)     # negative ids mark constrained slots
    if not keep.all():
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(ndof_r, ndof_c))
    return mat.tocsr()


# ---------------------------------------------------------------------------
# volume assembly

def assemble_stiffness(mesh, dm: DofMap, degree: int | None = None) -> sp.csr_matrix:
    """Stiffness matrix (grad, grad) over the DofMap's elements."""
    degree = 2 * dm.p if degree is None else degree
    qp, qw = simplex_quadrature(mesh.dim, degree)
    gref = shape_gradients(mesh.dim, dm.p, qp)          # (nb, nq, dim)
    nb = gref.shape[0]
    blocks = []
    idx = []
    for s in range(0, dm.elems.size, _CHUNK):
        sel = slice(s, min(s + _CHUNK, dm.elems.size))
        cells = mesh.elements[dm.elems[sel]]
        _, _, invJT, adet = _element_maps(mesh, cells)
        g = np.einsum("eij,bqj->ebqi", invJT, gref)
        w = qw[None, None, :] * adet[:, None, None]
        k = np.einsum("ebqi,ecqi,ebq->ebc", g, g,
                      np.broadcast_to(w, g.shape[:3]), optimize=True)
        blocks.append(k)
        idx.append(dm.element_dofs[sel])
    vals = np.concatenate(blocks) if blocks else np.empty((0, nb, nb))
    dofs = np.concatenate(idx) if idx else np.empty((0, nb), dtype=np.int64)
    rows = np.repeat(dofs, nb, axis=1)
    cols = np.tile(dofs, (1, nb))
    return _scatter(dm.ndof, dm.ndof, rows, cols, vals)


def assemble_mass(mesh, dm: DofMap, degree: int | None = None) -> sp.csr_matrix:
    degree = 2 * dm.p if degree is None else degree
    qp, qw = simplex_quadrature(mesh.dim, degree)
    phi = shape_values(mesh.dim, dm.p, qp)              # (nb, nq)
    nb = phi.shape[0]
    base = np.einsum("bq,cq,q->bc", phi, phi, qw)       # constant per element
    blocks, idx = [], []
    for s in range(0, dm.elems.size, _CHUNK):
        sel = slice(s, min(s + _CHUNK, dm.elems.size))
        cells = mesh.elements[dm.elems[sel]]
        _, _, _, adet = _element_maps(mesh, cells)
        blocks.append(base[None, :, :] * adet[:, None, None])
        idx.append(dm.element_dofs[sel])
    vals = np.concatenate(blocks)
    dofs = np.concatenate(idx)
    rows = np.repeat(dofs, nb, axis=1)
    cols = np.tile(dofs, (1, nb))
    return _scatter(dm.ndof, dm.ndof, rows, cols, vals)


def assemble_load(mesh, dm: DofMap, f, degree: int | None = None) -> np.ndarray:
    """Load vector (f, phi); degree defaults to max(2p, p+4) for exactness
    of the quartic benchmark load."""
    degree = max(2 * dm.p, dm.p + 4) if degree is None else degree
    qp, qw = simplex_quadrature(mesh.dim, degree)
    phi = shape_values(mesh.dim, dm.p, qp)
    vec = np.zeros(dm.ndof)
    for s in range(0, dm.elems.size, _CHUNK):
        sel = slice(s, min(s + _CHUNK, dm.elems.size))
        cells = mesh.elements[dm.elems[sel]]
        v0, J, _, adet = _element_maps(mesh, cells)
        x = v0[:, None, :] + np.einsum("eij,qj->eqi", J, qp)
        fv = f(x.reshape(-1, mesh.dim)).reshape(x.shape[:2])
        local = np.einsum("eq,bq,q,e->eb", fv, phi, qw, adet)
        np.add.at(vec, dm.element_dofs[sel].ravel(), local.ravel())
    return vec


def gradient_energy(mesh, dm: DofMap, u: np.ndarray, elems_sel=None) -> float:
    """Dirichlet energy of the coefficient vector over an element subset.

    elems_sel indexes into dm.elems (default: all).
    """
    degree = 2 * (dm.p - 1)
    qp, qw = simplex_quadrature(mesh.dim, degree)
    gref = shape_gradients(mesh.dim, dm.p, qp)
    sel_all = np.arange(dm.elems.size) if elems_sel is None else np.asarray(elems_sel)
    total = 0.0
    for s in range(0, sel_all.size, _CHUNK):
        sel = sel_all[s:s + _CHUNK]
        cells = mesh.elements[dm.elems[sel]]
        _, _, invJT, adet = _element_maps(mesh, cells)
        coef = u[dm.element_dofs[sel]]                  # (ne, nb)
        g = np.einsum("eij,bqj,eb->eqi", invJT, gref, coef)
        total += float(np.einsum("eqi,eqi,q,e->", g, g, qw, adet))
    return total


# ---------------------------------------------------------------------------
# facet assembly

def _facet_geometry(mesh, dm: DofMap, facets: np.ndarray, degree: int):
    """Quadrature data on facets: physical points, weights, outward normals,
    owner positions, and the owner's basis values/gradients at the points."""
    facets = np.sort(np.asarray(facets), axis=1)
    nf = facets.shape[0]
    dim = mesh.dim
    qp, qw = simplex_quadrature(dim - 1, degree)
    nq = qw.size
    p_f = mesh.vertices[facets]                         # (nf, dim, dim)
    tang = p_f[:, 1:, :] - p_f[:, :1, :]                # (nf, dim-1, dim)
    x = p_f[:, None, 0, :] + np.einsum("qk,fki->fqi", qp, tang)
    if dim == 2:
        meas = np.linalg.norm(tang[:, 0, :], axis=1)
        normal = np.column_stack([tang[:, 0, 1], -tang[:, 0, 0]])
    else:
        cr = np.cross(tang[:, 0, :], tang[:, 1, :])
        meas = np.linalg.norm(cr, axis=1)               # = 2 * area
        normal = cr
    owners = dm.facet_owners(mesh, facets)
    own_cells = mesh.elements[dm.elems[owners]]
    opp = own_cells.sum(axis=1) - facets.sum(axis=1)
    sign = np.einsum("fi,fi->f", normal, p_f[:, 0, :] - mesh.vertices[opp])
    normal = normal * (np.sign(sign) / np.linalg.norm(normal, axis=1))[:, None]

    v0, J, invJT, _ = _element_maps(mesh, own_cells)
    xi = np.einsum("fji,fqi->fqj",
                   np.swapaxes(invJT, 1, 2), x - v0[:, None, :])
    flat = xi.reshape(-1, dim)
    phi = shape_values(dim, dm.p, flat).reshape(-1, nf, nq)
    gref = shape_gradients(dim, dm.p, flat).reshape(-1, nf, nq, dim)
    gphys = np.einsum("fij,bfqj->bfqi", invJT, gref)
    # measure factor: edge length in 2D, twice the area in 3D (the reference
    # triangle rule integrates constants to 1/2)
    wq = qw[None, :] * meas[:, None]
    return facets, x, wq, normal, owners, phi, gphys


def _facet_trace_values(dim: int, p: int, degree: int) -> np.ndarray:
    """Values of the facet's own Lagrange basis at the facet rule points,
    ordered like facet_dofs_many (sorted vertices, then lexicographic edges)."""
    qp, _ = simplex_quadrature(dim - 1, degree)
    return shape_values(dim - 1, p, qp)                 # (nbf, nq)


def assemble_boundary_mass(mesh, dm: DofMap, facets, cols=None,
                           degree: int | None = None) -> sp.csr_matrix:
    """Facet mass matrix; columns in `cols` numbering (default: dm itself)."""
    facets = np.asarray(facets)
    if facets.size == 0:
        nc = (cols or dm).ndof
        return sp.csr_matrix((dm.ndof, nc))
    degree = 2 * dm.p if degree is None else degree
    facets, x, wq, _, owners, phi, _ = _facet_geometry(mesh, dm, facets, degree)
    psi = _facet_trace_values(mesh.dim, dm.p, degree)   # (nbf, nq)
    vals = np.einsum("bfq,cq,fq->fbc", phi, psi, wq)
    col_map = dm if cols is None else cols
    cdofs = col_map.facet_dofs_many(facets)             # (nf, nbf)
    rdofs = dm.element_dofs[owners]                     # (nf, nb)
    nb, nbf = phi.shape[0], psi.shape[0]
    rows = np.repeat(rdofs, nbf, axis=1)
    colsx = np.tile(cdofs, (1, nb))
    return _scatter(dm.ndof, col_map.ndof, rows, colsx, vals)


def assemble_facet_mass(mesh_vertices, facets, col_map, degree: int,
                        p: int, dim: int) -> sp.csr_matrix:
    """Mass matrix of the facet trace basis with itself (trace x trace)."""
    facets = np.sort(np.asarray(facets), axis=1)
    if facets.size == 0:
        return sp.csr_matrix((col_map.ndof, col_map.ndof))
    qp, qw = simplex_quadrature(dim - 1, degree)
    p_f = mesh_vertices[facets]
    tang = p_f[:, 1:, :] - p_f[:, :1, :]
    if dim == 2:
        meas = np.linalg.norm(tang[:, 0, :], axis=1)
    else:
        meas = np.linalg.norm(np.cross(tang[:, 0, :], tang[:, 1, :]), axis=1)
    psi = shape_values(dim - 1, p, qp)                  # (nbf, nq)
    base = np.einsum("bq,cq,q->bc", psi, psi, qw)
    vals = base[None, :, :] * meas[:, None, None]
    dofs = col_map.facet_dofs_many(facets)
    nbf = psi.shape[0]
    rows = np.repeat(dofs, nbf, axis=1)
    cols = np.tile(dofs, (1, nbf))
    return _scatter(col_map.ndof, col_map.ndof, rows, cols, vals)


def assemble_normal_flux(mesh, dm: DofMap, facets, cols=None,
                         degree: int | None = None) -> sp.csr_matrix:
    """D with D[j, k] = int_F (d phi_j / d n) psi_k ds, n outward from the
    unique owner element in dm's element set."""
    facets = np.asarray(facets)
    if facets.size == 0:
        nc = (cols or dm).ndof
        return sp.csr_matrix((dm.ndof, nc))
    degree = 2 * dm.p if degree is None else degree
    facets, x, wq, normal, owners, _, gphys = _facet_geometry(mesh, dm, facets, degree)
    dn = np.einsum("bfqi,fi->bfq", gphys, normal)
    psi = _facet_trace_values(mesh.dim, dm.p, degree)
    vals = np.einsum("bfq,cq,fq->fbc", dn, psi, wq)
    col_map = dm if cols is None else cols
    cdofs = col_map.facet_dofs_many(facets)
    rdofs = dm.element_dofs[owners]
    nb, nbf = dn.shape[0], psi.shape[0]
    rows = np.repeat(rdofs, nbf, axis=1)
    colsx = np.tile(cdofs, (1, nb))
    return _scatter(dm.ndof, col_map.ndof, rows, colsx, vals)


# ---------------------------------------------------------------------------
# conforming reference solve

def conforming_solve(mesh, p: int, f, rtol: float = 1e-12,
                     load_degree: int | None = None):
    """Continuous Galerkin solve of -Laplace(u) = f, u = 0 on the boundary.

    Returns (coefficients over the full DofMap with zeros on the boundary,
    Dirichlet energy).  Direct factorization for small systems, AMG-CG for
    large ones (memory-safe in 3D).
    """
    dm = build_dofmap(mesh, None, p)
    K = assemble_stiffness(mesh, dm)
    F = assemble_load(mesh, dm, f, load_degree)
    free = dm.free
    Kff = K[free][:, free].tocsc()
    Ff = F[free]
    if mesh.dim == 2 or free.size <= 20000:
        lu = spla.splu(Kff, permc_spec="MMD_AT_PLUS_A",
                       options={"SymmetricMode": True})
        uf = lu.solve(Ff)
    else:
        import pyamg
        ml = pyamg.smoothed_aggregation_solver(Kff.tocsr())
        uf = ml.solve(Ff, tol=rtol, accel="cg", maxiter=400)
        res = np.linalg.norm(Ff - Kff @ uf) / np.linalg.norm(Ff)
        if res > 1e-9:
            raise RuntimeError(f"AMG-CG did not converge (residual {res:.2e})")
    u = np.zeros(dm.ndof)
    u[free] = uf
    return dm, u, float(uf @ (Kff @ uf))


# ---------------------------------------------------------------------------
# benchmark loads

def load_poly(dim: int):
    """Polynomial load whose exact solution has unit Dirichlet energy.

    dim 3: u = 30 x(1-x) y(1-y) z(1-z); dim 2: u = sqrt(45) x(1-x) y(1-y).
    """
    if dim == 3:
        c = 30.0
        def f(x):
            a = x[:, 0] * (1 - x[:, 0])
            b = x[:, 1] * (1 - x[:, 1])
            d = x[:, 2] * (1 - x[:, 2])
            return 2 * c * (a * b + a * d + b * d)
        def exact(x):
            return c * (x[:, 0] * (1 - x[:, 0]) * x[:, 1] * (1 - x[:, 1])
                        * x[:, 2] * (1 - x[:, 2]))
    elif dim == 2:
        c = np.sqrt(45.0)
        def f(x):
            a = x[:, 0] * (1 - x[:, 0])
            b = x[:, 1] * (1 - x[:, 1])
            return 2 * c * (a + b)
        def exact(x):
            return c * x[:, 0] * (1 - x[:, 0]) * x[:, 1] * (1 - x[:, 1])
    else:
        raise ValueError("dim must be 2 or 3")
    return f, exact


def get_load(name: str, dim: int):
    """Named load -> (f, exact solution or None, exact energy or None)."""
    if name == "poly":
        f, exact = load_poly(dim)
        return f, exact, 1.0
    if name == "one":
        return (lambda x: np.ones(x.shape[0])), None, None
    raise ValueError(f"unknown load {name!r}")
