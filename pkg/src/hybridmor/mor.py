"""Per-subdomain model order reduction of the local lifting operator.

Each subdomain is extended geometrically; the lifting Z maps boundary data
on the extension surface (excluding the outer boundary) to the solution of
the homogeneous problem on the extension, restricted to the core.  Z is
compressed by a weighted truncated SVD: the row geometry is the core energy
norm M = K + h^-1 Mb, the column geometry the H^1 trace Gram N obtained as
a Schur complement of the extended H^1 Gram onto the surface DOFs.  Keeping
all singular values above eps bounds the worst-case lifting error by eps
uniformly over unit-N-norm boundary data.

The retained basis is augmented by the particular solution of the load on
the extension, then rotated to diagonalize the local Nitsche block A_i, so
applying A_i^-1 in the reduced space is a diagonal scaling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .mesh import facet_incidence

log = logging.getLogger(__name__)

_RHS_BLOCK = 256
_WF_DROP = 1e-12


@dataclass
class ExtendedSystem:
    """Stiffness and H^1 Gram over an extended subdomain.

    Index sets live in the free (Dirichlet-eliminated) numbering of the
    extension: `gamma` are the surface DOFs carrying boundary data,
    `interior` the rest, `core_rows` the positions of the core subdomain's
    free DOFs.
    """

    p: int
    dm_ext: object
    K_ff: sp.csr_matrix
    G_ff: sp.csr_matrix
    gamma: np.ndarray
    interior: np.ndarray
    core_rows: np.ndarray
    n_ext_dofs: int                    # all DOFs of the extension, for reports
    _lu_K: object = field(default=None, repr=False)

    @property
    def n_gamma(self) -> int:
        return self.gamma.size

    def lu_K(self):
        if self._lu_K is None:
            KII = self.K_ff[self.interior][:, self.interior].tocsc()
            self._lu_K = spla.splu(KII, permc_spec="MMD_AT_PLUS_A",
                                   options={"SymmetricMode": True})
        return self._lu_K


def embed_dofs(dm_from, dm_to) -> np.ndarray:
    """Positions of dm_from's DOFs inside dm_to (matching nodes)."""
    nv_from = np.flatnonzero(dm_from.vertex_dof >= 0)
    out = np.empty(dm_from.ndof, dtype=np.int64)
    out[dm_from.vertex_dof[nv_from]] = dm_to.vertex_dof[nv_from]
    if dm_from.p == 2 and dm_from.edge_keys.size:
        out[dm_from.edge_dofs] = fem._lookup_edges(
            dm_to.edge_keys, dm_to.edge_dofs, dm_from.edge_keys)
    if (out < 0).any():
        raise ValueError("element set is not contained in the target set")
    return out


def build_extended_system(mesh, core_dofmap, ext_elems, p: int,
                          dirichlet_nodes=None) -> ExtendedSystem:
    """Assemble K+ and G+ = K+ + mass on the extended element set."""
    dm_ext = fem.build_dofmap(mesh, ext_elems, p, dirichlet_nodes)
    K = fem.assemble_stiffness(mesh, dm_ext)
    G = K + fem.assemble_mass(mesh, dm_ext)
    free = dm_ext.free
    K_ff = K[free][:, free].tocsr()
    G_ff = G[free][:, free].tocsr()

    # surface facets of the extension that are not on the outer boundary
    inc = facet_incidence(mesh.elements[dm_ext.elems], mesh.dim)
    outer = {tuple(sorted(f)) for f in mesh.boundary_facets}
    surf = [f for f, owners in inc.items()
            if len(owners) == 1 and f not in outer]
    if surf:
        gdofs = np.unique(dm_ext.facet_dofs_many(np.array(surf)))
        gamma = dm_ext.free_index[gdofs]
        gamma = np.unique(gamma[gamma >= 0])
    else:
        gamma = np.empty(0, dtype=np.int64)
    interior = np.setdiff1d(np.arange(free.size), gamma)

    core_full = embed_dofs(core_dofmap, dm_ext)
    core_rows = dm_ext.free_index[core_full[core_dofmap.free]]
    if (core_rows < 0).any():
        raise ValueError("core free DOF constrained in the extension")
    return ExtendedSystem(p, dm_ext, K_ff, G_ff, gamma, interior,
                          core_rows, dm_ext.ndof)


def build_lifting(ext: ExtendedSystem) -> np.ndarray:
    """Z: unit boundary data on each gamma DOF -> core values, (m, n_gamma)."""
    m = ext.core_rows.size
    ng = ext.n_gamma
    Z = np.empty((m, ng))
    if ng == 0:
        return Z
    lu = ext.lu_K()
    K_IB = ext.K_ff[ext.interior].tocsc()[:, ext.gamma]
    # positions of core rows inside interior/gamma for the gather
    pos_in_int = -np.ones(ext.K_ff.shape[0], dtype=np.int64)
    pos_in_int[ext.interior] = np.arange(ext.interior.size)
    pos_in_gam = -np.ones(ext.K_ff.shape[0], dtype=np.int64)
    pos_in_gam[ext.gamma] = np.arange(ng)
    core_int = pos_in_int[ext.core_rows]
    core_gam = pos_in_gam[ext.core_rows]
    inside = core_int >= 0
    for s in range(0, ng, _RHS_BLOCK):
        e = min(s + _RHS_BLOCK, ng)
        rhs = -K_IB[:, s:e].toarray()
        WI = lu.solve(rhs)
        blk = np.zeros((m, e - s))
        blk[inside] = WI[core_int[inside]]
        sel = np.flatnonzero((core_gam >= s) & (core_gam < e))
        blk[sel, core_gam[sel] - s] = 1.0
        Z[:, s:e] = blk
    return Z


def particular_solution(ext: ExtendedSystem, mesh, load,
                        load_degree: int | None = None) -> np.ndarray:
    """Core restriction of the zero-boundary-data solution of the load."""
    fv = fem.assemble_load(mesh, ext.dm_ext, load, load_degree)[ext.dm_ext.free]
    w = np.zeros(ext.K_ff.shape[0])
    if ext.interior.size:
        w[ext.interior] = ext.lu_K().solve(fv[ext.interior])
    return w[ext.core_rows]


def build_weights(ext: ExtendedSystem, K_stiff_core: sp.spmatrix,
                  Mb_core: sp.spmatrix, h_i: float):
    """Row weight M = K + h^-1 Mb (core) and column weight N (surface Gram).

    N is the Schur complement of the extended H^1 Gram onto the surface
    DOFs: N = G_BB - G_BI G_II^-1 G_IB, computed with a sparse
    factorization and blocked dense right-hand sides.
    """
    M = (K_stiff_core + (1.0 / h_i) * Mb_core).tocsr()
    ng = ext.n_gamma
    N = np.empty((ng, ng))
    if ng == 0:
        return M, N
    G_BB = ext.G_ff[ext.gamma].tocsc()[:, ext.gamma].toarray()
    if ext.interior.size == 0:
        return M, G_BB
    GII = ext.G_ff[ext.interior].tocsc()[:, ext.interior].tocsc()
    lu = spla.splu(GII, permc_spec="MMD_AT_PLUS_A",
                   options={"SymmetricMode": True})
    G_IB = ext.G_ff[ext.interior].tocsc()[:, ext.gamma]
    N[:] = G_BB
    for s in range(0, ng, _RHS_BLOCK):
        e = min(s + _RHS_BLOCK, ng)
        X = lu.solve(G_IB[:, s:e].toarray())
        N[:, s:e] -= G_IB.T @ X
    return M, 0.5 * (N + N.T)


def weighted_svd(Z: np.ndarray, M: sp.spmatrix, N: np.ndarray):
    """SVD of Z between the M (rows) and N (columns) geometries.

    Returns (U, sigma, L_M): the left singular vectors of L_M' Z L_N^-'
    together with the full singular value list and the lower Cholesky
    factor of M.  The M-orthonormal basis for any truncation rank k is
    recovered as L_M^-' U[:, :k] (see truncated_basis).
    """
    m, ng = Z.shape
    if ng == 0 or m == 0:
        return np.empty((m, 0)), np.empty(0), np.empty((m, m))
    L_M = sla.cholesky(M.toarray() if sp.issparse(M) else M, lower=True)
    L_N = sla.cholesky(N, lower=True)
    Y = sla.solve_triangular(L_N, (L_M.T @ Z).T, lower=True).T
    U, s, _ = sla.svd(Y, full_matrices=False)
    return U, s, L_M


def truncation_rank(sigma: np.ndarray, eps: float) -> int:
    """Number of singular values strictly above the tolerance."""
    return int((sigma > eps).sum())


def truncated_basis(U: np.ndarray, sigma: np.ndarray, L_M: np.ndarray,
                    eps: float) -> np.ndarray:
    """M-orthonormal basis for the rank-k range, k = #{sigma_j > eps}."""
    k = truncation_rank(sigma, eps)
    if U.shape[0] == 0 or k == 0:
        return np.empty((U.shape[0], 0))
    return sla.solve_triangular(L_M, U[:, :k], lower=True, trans="T")


def weighted_truncated_svd(Z: np.ndarray, M: sp.spmatrix, N: np.ndarray,
                           eps: float):
    """Truncated SVD of Z between the M (rows) and N (columns) geometries.

    Returns (U_k, sigma): U_k is M-orthonormal with k = #{sigma_j > eps}
    columns spanning range(Z); sigma is the full singular value list of
    L_M' Z L_N^-'.
    """
    U, s, L_M = weighted_svd(Z, M, N)
    return truncated_basis(U, s, L_M, eps), s


@dataclass
class ReducedBundle:
    """Reduced subdomain data for the trace solve.

    lam diagonalizes the projected Nitsche block; B_t, f_t, K_stiff_t are
    the projected coupling, load and stiffness; d is the subdomain's
    contribution to diag(B_t' lam^-1 B_t) on its trace columns.
    """

    i: int
    h: float
    m: int                       # core free DOFs
    n_ext: int                   # extension DOFs (all), for reports
    k_sigma: int                 # singular values above eps
    kept_wf: bool                # particular-solution column retained
    lam: np.ndarray
    B_t: np.ndarray              # (k, K_loc) dense
    f_t: np.ndarray
    K_stiff_t: np.ndarray
    d: np.ndarray
    trace_cols: np.ndarray
    sigma: np.ndarray
    Q: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.lam.size


def build_reduced_bundle(blocks, U_k: np.ndarray, sigma: np.ndarray,
                         w_f: np.ndarray, M: sp.spmatrix,
                         n_ext: int, store_q: bool = True) -> ReducedBundle:
    """Augment the basis with the particular solution and diagonalize A_i."""
    m = U_k.shape[0]
    Mw = M @ w_f
    wnorm = float(np.sqrt(max(w_f @ Mw, 0.0)))
    q = w_f - U_k @ (U_k.T @ Mw)
    qn = float(np.sqrt(max(q @ (M @ q), 0.0)))
    kept = wnorm > 0.0 and qn > _WF_DROP * wnorm
    Q0 = np.column_stack([U_k, q / qn]) if kept else U_k

    if Q0.shape[1] == 0:
        k_loc = blocks.trace_cols.size
        return ReducedBundle(
            blocks.i, blocks.h, m, n_ext, U_k.shape[1], False,
            np.empty(0), np.empty((0, k_loc)), np.empty(0),
            np.empty((0, 0)), np.zeros(k_loc), blocks.trace_cols, sigma,
            np.empty((m, 0)) if store_q else None)

    A_hat = Q0.T @ (blocks.A @ Q0)
    A_hat = 0.5 * (A_hat + A_hat.T)
    lam, V = sla.eigh(A_hat)
    if lam.min() <= 0:
        raise RuntimeError(
            f"projected Nitsche block not positive definite "
            f"(min eig {lam.min():.3e} in subdomain {blocks.i})")
    Q = Q0 @ V
    B_t = np.asarray((blocks.B.T @ Q).T)
    f_t = Q.T @ blocks.f
    K_t = Q.T @ (blocks.K_stiff @ Q)
    d = ((B_t ** 2) / lam[:, None]).sum(axis=0)
    return ReducedBundle(
        blocks.i, blocks.h, m, n_ext, U_k.shape[1], kept,
        lam, B_t, f_t, 0.5 * (K_t + K_t.T), d, blocks.trace_cols, sigma,
        Q if store_q else None)


@dataclass
class SubdomainFactors:
    """Tolerance-independent reduction data for one subdomain.

    The expensive work (extension assembly, lifting solves, weighted SVD)
    does not depend on the truncation tolerance, so one SubdomainFactors
    serves a whole eps sweep via bundle_from_factors.
    """

    blocks: object               # LocalBlocks of the core
    n_ext: int                   # extended free DOF count
    sigma: np.ndarray            # full singular value list
    w_f: np.ndarray              # particular solution on the core
    M: sp.spmatrix               # row-geometry weight
    U: np.ndarray                # left singular vectors, L_M geometry
    L_M: np.ndarray              # lower Cholesky factor of M

    def basis(self, eps: float) -> np.ndarray:
        return truncated_basis(self.U, self.sigma, self.L_M, eps)


def compute_subdomain_factors(mesh, core_elems, ext_elems, h_i: float,
                              facets, trace_view, i: int, p: int,
                              alpha: float, load,
                              load_degree: int | None = None,
                              dirichlet_nodes=None):
    """Per-subdomain pipeline up to (and including) the weighted SVD.

    Returns (factors, blocks, ext); ext is returned with its
    factorization released.
    """
    from .hybrid import assemble_blocks_core

    blocks = assemble_blocks_core(mesh, core_elems, h_i, facets, trace_view,
                                  i, p, alpha, load, load_degree,
                                  keep_diagnostics=True,
                                  dirichlet_nodes=dirichlet_nodes)
    ext = build_extended_system(mesh, blocks.dofmap, ext_elems, p,
                                dirichlet_nodes)
    Z = build_lifting(ext)
    w_f = particular_solution(ext, mesh, load, load_degree)
    M, N = build_weights(ext, blocks.K_stiff, blocks.Mb, h_i)
    U, sigma, L_M = weighted_svd(Z, M, N)
    factors = SubdomainFactors(blocks, ext.n_ext_dofs, sigma, w_f, M, U, L_M)
    ext._lu_K = None             # release the factorization
    return factors, blocks, ext


def bundle_from_factors(factors: SubdomainFactors, eps: float,
                        store_q: bool = True) -> ReducedBundle:
    """Truncate precomputed factors at eps and build the reduced bundle."""
    U_k = factors.basis(eps)
    return build_reduced_bundle(factors.blocks, U_k, factors.sigma,
                                factors.w_f, factors.M, factors.n_ext,
                                store_q)


def reduce_subdomain(mesh, core_elems, ext_elems, h_i: float, facets,
                     trace_view, i: int, p: int, alpha: float, eps: float,
                     load, load_degree: int | None = None,
                     store_q: bool = True, dirichlet_nodes=None):
    """Full per-subdomain pipeline: blocks, extension, lifting, weighted
    SVD, reduced bundle.  Returns (bundle, blocks, ext)."""
    factors, blocks, ext = compute_subdomain_factors(
        mesh, core_elems, ext_elems, h_i, facets, trace_view, i, p, alpha,
        load, load_degree, dirichlet_nodes)
    bundle = bundle_from_factors(factors, eps, store_q)
    return bundle, blocks, ext
