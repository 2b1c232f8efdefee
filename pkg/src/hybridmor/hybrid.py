"""Hybrid Nitsche coupling of subdomain solves through a skeleton trace.

Per subdomain i the retained (Dirichlet-eliminated) blocks are

    A_i = K_i - D_i - D_i' + (alpha h_i)^-1 Mb_i        (volume x volume)
    B_i = Dt_i - (alpha h_i)^-1 Mbt_i                   (volume x trace)
    C   = sum_i (alpha h_i)^-1 Mbtt_i                   (trace x trace)

where D is the facet normal-flux matrix, Mb facet mass, and t marks trace
columns.  Facets of a subdomain lying on the outer boundary drop out
entirely: every basis function retained after strong elimination vanishes
identically there, so their Nitsche terms contribute only to eliminated
rows/columns.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .fem import (assemble_boundary_mass, assemble_facet_mass, assemble_load,
                  assemble_normal_flux, assemble_stiffness, build_dofmap)

log = logging.getLogger(__name__)


@dataclass
class TraceSpace:
    """Continuous Lagrange DOFs on the interior skeleton facets.

    DOFs on the outer boundary are constrained to zero; `free` holds the
    unconstrained ones (the unknowns of the reduced system).
    """

    dim: int
    p: int
    ndof: int
    vertex_dof: np.ndarray
    edge_keys: np.ndarray
    edge_dofs: np.ndarray
    edge_stride: int
    constrained: np.ndarray
    free: np.ndarray
    free_index: np.ndarray

    @property
    def n_free(self) -> int:
        return self.free.size

    def facet_dofs_many(self, facets: np.ndarray) -> np.ndarray:
        facets = np.sort(np.asarray(facets), axis=1)
        nf, k = facets.shape
        cols = [self.vertex_dof[facets[:, j]] for j in range(k)]
        if self.p == 2:
            for a in range(k):
                for b in range(a + 1, k):
                    key = facets[:, a] * self.edge_stride + facets[:, b]
                    cols.append(fem._lookup_edges(self.edge_keys,
                                                  self.edge_dofs, key))
        out = np.column_stack(cols)
        if (out < 0).any():
            raise ValueError("facet not contained in the skeleton")
        return out


def build_trace_space(mesh, skeleton, p: int) -> TraceSpace:
    inner = skeleton.facets[~skeleton.on_outer]
    nv_total = mesh.num_vertices
    vertex_dof = -np.ones(nv_total, dtype=np.int64)
    verts = np.unique(inner) if inner.size else np.empty(0, dtype=np.int64)
    vertex_dof[verts] = np.arange(verts.size)
    if p == 2 and inner.size:
        k = inner.shape[1]
        pairs = []
        srt = np.sort(inner, axis=1)
        for a in range(k):
            for b in range(a + 1, k):
                pairs.append(srt[:, [a, b]])
        pairs = np.vstack(pairs)
        edge_keys = np.unique(pairs[:, 0] * nv_total + pairs[:, 1])
        edge_dofs = verts.size + np.arange(edge_keys.size)
    else:
        edge_keys = np.empty(0, dtype=np.int64)
        edge_dofs = np.empty(0, dtype=np.int64)
    ndof = verts.size + edge_keys.size

    # DOFs touching the outer boundary are constrained to zero
    con = []
    bf = mesh.boundary_facets
    if len(bf):
        vmask = vertex_dof[np.unique(bf)]
        con.append(vmask[vmask >= 0])
        if p == 2 and edge_keys.size:
            k = bf.shape[1]
            srt = np.sort(bf, axis=1)
            bkeys = np.unique(np.concatenate([
                srt[:, a] * nv_total + srt[:, b]
                for a in range(k) for b in range(a + 1, k)]))
            con.append(edge_dofs[np.isin(edge_keys, bkeys)])
    constrained = np.unique(np.concatenate(con)) if con else np.empty(0, np.int64)
    free = np.setdiff1d(np.arange(ndof), constrained)
    free_index = -np.ones(ndof, dtype=np.int64)
    free_index[free] = np.arange(free.size)
    return TraceSpace(mesh.dim, p, ndof, vertex_dof, edge_keys, edge_dofs,
                      nv_total, constrained, free, free_index)


class FreeTraceView:
    """Facet -> unconstrained trace DOF ids, -1 marking constrained slots.

    Wraps a TraceSpace for in-process use; worker processes build the same
    interface from the per-facet DOF table shipped in their task file.
    """

    def __init__(self, trace: TraceSpace):
        self._trace = trace
        self.ndof = trace.n_free

    def facet_dofs_many(self, facets):
        return self._trace.free_index[self._trace.facet_dofs_many(facets)]


class ShippedTraceView:
    """FreeTraceView equivalent reconstructed from a shipped facet table."""

    def __init__(self, facets: np.ndarray, facet_dofs: np.ndarray, ndof: int):
        self.ndof = int(ndof)
        self._table = {tuple(f): d for f, d in
                       zip(np.sort(facets, axis=1), facet_dofs)}

    def facet_dofs_many(self, facets):
        facets = np.sort(np.asarray(facets), axis=1)
        return np.array([self._table[tuple(f)] for f in facets])


@dataclass
class LocalBlocks:
    """Dirichlet-eliminated subdomain blocks of the hybrid form."""

    i: int
    h: float
    dofmap: object
    A: sp.csr_matrix            # m x m
    B: sp.csr_matrix            # m x K_loc, columns trace_cols
    f: np.ndarray               # m
    K_stiff: sp.csr_matrix      # m x m
    trace_cols: np.ndarray      # global free-trace indices of B's columns
    c_vals: np.ndarray          # COO data of the C contribution
    c_rows: np.ndarray          # global free-trace indices
    c_cols: np.ndarray
    Mb: sp.csr_matrix = None    # unscaled facet masses, for diagnostics
    Mbt: sp.csr_matrix = None
    Mbtt: sp.csr_matrix = None

    @property
    def m(self) -> int:
        return self.A.shape[0]


def subdomain_facets(skeleton, i: int) -> np.ndarray:
    """Interior skeleton facets incident to subdomain i."""
    mask = (~skeleton.on_outer) & ((skeleton.incident[:, 0] == i)
                                   | (skeleton.incident[:, 1] == i))
    return skeleton.facets[mask]


def assemble_blocks_core(mesh, core_elems, h_i: float, facets, trace_view,
                         i: int, p: int, alpha: float, load,
                         load_degree: int | None = None,
                         keep_diagnostics: bool = True,
                         dirichlet_nodes=None) -> LocalBlocks:
    """Assemble the subdomain blocks against a free-trace column view.

    `facets` are the interior skeleton facets of the subdomain;
    `trace_view` maps facets to unconstrained global trace DOF columns.
    """
    dm = build_dofmap(mesh, core_elems, p, dirichlet_nodes)
    pen = 1.0 / (alpha * h_i)

    K = assemble_stiffness(mesh, dm)
    fvec = assemble_load(mesh, dm, load, load_degree)
    facets = np.asarray(facets)
    if facets.size:
        D = assemble_normal_flux(mesh, dm, facets)
        Mb = assemble_boundary_mass(mesh, dm, facets)
        Dt = assemble_normal_flux(mesh, dm, facets, cols=trace_view)
        Mbt = assemble_boundary_mass(mesh, dm, facets, cols=trace_view)
        Mbtt = assemble_facet_mass(mesh.vertices, facets, trace_view,
                                   2 * p, p, mesh.dim)
    else:
        D = Mb = sp.csr_matrix((dm.ndof, dm.ndof))
        Dt = Mbt = sp.csr_matrix((dm.ndof, trace_view.ndof))
        Mbtt = sp.csr_matrix((trace_view.ndof, trace_view.ndof))

    A_full = K - D - D.T + pen * Mb
    B_full = Dt - pen * Mbt

    free = dm.free
    A = A_full[free][:, free].tocsr()
    K_s = K[free][:, free].tocsr()
    fv = fvec[free]

    Bf = B_full[free].tocsc()
    trace_cols = np.flatnonzero(np.diff(Bf.indptr) > 0)
    B = Bf[:, trace_cols].tocsr()

    Ct = (pen * Mbtt).tocoo()
    blocks = LocalBlocks(
        i=i, h=float(h_i), dofmap=dm, A=A, B=B, f=fv, K_stiff=K_s,
        trace_cols=trace_cols, c_vals=Ct.data, c_rows=Ct.row, c_cols=Ct.col)
    if keep_diagnostics:
        blocks.Mb = Mb[free][:, free].tocsr()
        blocks.Mbt = Mbt[free].tocsc()[:, trace_cols].tocsr()
        blocks.Mbtt = Mbtt.tocsc()[:, trace_cols].tocsr()[trace_cols].tocsr()
    return blocks


def assemble_local_blocks(mesh, partition, skeleton, trace: TraceSpace,
                          i: int, p: int, alpha: float, load,
                          load_degree: int | None = None,
                          keep_diagnostics: bool = True) -> LocalBlocks:
    """Assemble A_i, B_i, f_i and the C contribution of subdomain i."""
    return assemble_blocks_core(
        mesh, partition.core[i], float(partition.h[i]),
        subdomain_facets(skeleton, i), FreeTraceView(trace),
        i, p, alpha, load, load_degree, keep_diagnostics)


def assemble_trace_matrix(blocks_c, n_free: int) -> sp.csr_matrix:
    """Sum the per-subdomain C contributions (COO triplets) into C."""
    rows, cols, vals = [], [], []
    for rc in blocks_c:
        r, c, v = rc
        rows.append(r)
        cols.append(c)
        vals.append(v)
    if not rows:
        return sp.csr_matrix((n_free, n_free))
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_free, n_free)).tocsr()


def assemble_C(blocks: list[LocalBlocks], n_free: int) -> sp.csr_matrix:
    return assemble_trace_matrix(
        [(b.c_rows, b.c_cols, b.c_vals) for b in blocks], n_free)


def _factor_spd(A: sp.spmatrix):
    return spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A",
                     options={"SymmetricMode": True})


def solve_full_nitsche(blocks: list[LocalBlocks], C: sp.csr_matrix,
                       tol: float = 1e-10, maxiter: int = 20000,
                       method: str = "pcg"):
    """Solve the unreduced hybrid system by Schur complement in the trace.

    Returns (beta_list, beta0, iterations).  method "dense" assembles the
    Schur complement explicitly (small problems / tests).
    """
    from .solver import pcg

    K = C.shape[0]
    lus = [_factor_spd(b.A) for b in blocks]
    rhs = np.zeros(K)
    for b, lu in zip(blocks, lus):
        rhs[b.trace_cols] -= b.B.T @ lu.solve(b.f)

    if K == 0:
        beta0 = np.zeros(0)
        iters = 0
    elif method == "dense":
        S = C.toarray()
        for b, lu in zip(blocks, lus):
            X = lu.solve(b.B.toarray())
            S[np.ix_(b.trace_cols, b.trace_cols)] -= b.B.T @ X
        beta0 = np.linalg.solve(S, rhs)
        iters = 0
    else:
        def apply(y):
            out = C @ y
            for b, lu in zip(blocks, lus):
                yl = y[b.trace_cols]
                out[b.trace_cols] -= b.B.T @ lu.solve(b.B @ yl)
            return out
        res = pcg(apply, rhs, C.diagonal(), tol=tol, maxiter=maxiter)
        if not res.converged:
            log.warning("full-order PCG did not converge in %d iterations",
                        res.iterations)
        beta0 = res.x
        iters = res.iterations

    beta = [lu.solve(b.f - b.B @ beta0[b.trace_cols])
            for b, lu in zip(blocks, lus)]
    return beta, beta0, iters


def dense_schur(blocks: list[LocalBlocks], C: sp.csr_matrix) -> np.ndarray:
    """Explicit Schur complement matrix, for small tests."""
    S = C.toarray()
    for b in blocks:
        lu = _factor_spd(b.A)
        X = lu.solve(b.B.toarray())
        S[np.ix_(b.trace_cols, b.trace_cols)] -= b.B.T @ X
    return S


def subdomain_energies(blocks: list[LocalBlocks],
                       beta: list[np.ndarray]) -> np.ndarray:
    return np.array([float(bi @ (b.K_stiff @ bi))
                     for b, bi in zip(blocks, beta)])


def energy_error(energies, exact_energy: float = 1.0) -> float:
    """Energy-norm error sqrt(|u|^2 - sum_i |u_h|^2_i) for normalized loads.

    Signed square root: negative values indicate energy overshoot.
    """
    gap = exact_energy - float(np.sum(energies))
    return math.copysign(math.sqrt(abs(gap)), gap)


def reduction_error(energies_a, energies_b) -> float:
    """sqrt of the summed absolute per-subdomain energy differences."""
    ea = np.asarray(energies_a, dtype=float)
    eb = np.asarray(energies_b, dtype=float)
    if ea.shape != eb.shape:
        raise ValueError("energy lists must have equal length")
    return math.sqrt(float(np.abs(ea - eb).sum()))


def skeleton_mismatch(blocks: list[LocalBlocks], beta: list[np.ndarray],
                      beta0: np.ndarray) -> float:
    """sqrt( sum_i ||u_i - u_0||^2 on the subdomain interfaces )."""
    total = 0.0
    for b, bi in zip(blocks, beta):
        if b.Mb is None:
            raise ValueError("blocks were assembled without diagnostics")
        b0 = beta0[b.trace_cols]
        total += float(bi @ (b.Mb @ bi) - 2.0 * bi @ (b.Mbt @ b0)
                       + b0 @ (b.Mbtt @ b0))
    return math.sqrt(max(total, 0.0))
