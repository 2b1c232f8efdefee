"""Shared mini-pipeline for tests: mesh -> partition -> reduction -> solve."""

from types import SimpleNamespace

import numpy as np

from hybridmor import fem, hybrid, mesh as hmesh, mor, solver


def build_case(dim, divisions, n, p=2, r=2.0, relative=True, alpha=0.01,
               eps=(1e-4,), load="poly", store_q=True):
    """Run the in-process pipeline on a structured mesh.

    `r` is a multiple of the minimum edge length when `relative` is True,
    otherwise an absolute radius (r=0 keeps the extension equal to the
    core).  Returns a namespace with every intermediate object.
    """
    m = hmesh.generate_structured_mesh(dim, divisions)
    part = hmesh.partition_elements(m, n)
    radius = r * hmesh.min_edge_length(m) if relative else r
    part = hmesh.extend_subdomains(m, part, radius)
    skel = hmesh.extract_skeleton(m, part)
    trace = hybrid.build_trace_space(m, skel, p)
    view = hybrid.FreeTraceView(trace)
    f, exact, exact_energy = fem.get_load(load, dim)

    factors, blocks = [], []
    for i in range(n):
        facets = hybrid.subdomain_facets(skel, i)
        fa, bl, _ = mor.compute_subdomain_factors(
            m, part.core[i], part.ext[i], float(part.h[i]), facets, view,
            i, p, alpha, f)
        factors.append(fa)
        blocks.append(bl)
    C = hybrid.assemble_C(blocks, view.ndof)
    bundles = {e: [mor.bundle_from_factors(fa, e, store_q=store_q)
                   for fa in factors]
               for e in eps}
    return SimpleNamespace(
        mesh=m, partition=part, skeleton=skel, trace=trace, view=view,
        load=f, exact=exact, exact_energy=exact_energy, p=p, alpha=alpha,
        blocks=blocks, factors=factors, C=C, bundles=bundles)


def solve_reduced(case, eps, tol=1e-12):
    """Solve the reduced trace system for one tolerance of a build_case."""
    problem = solver.build_schur_problem(case.C, case.bundles[eps], tol=tol)
    result = solver.solve_schur(problem)
    return problem, result, solver.back_substitute(problem, result)


def central_subdomain(case):
    """Index of the subdomain whose core centroid is nearest the center."""
    m, part = case.mesh, case.partition
    center = 0.5 * (m.vertices.min(axis=0) + m.vertices.max(axis=0))
    cents = m.vertices[m.elements].mean(axis=1)
    dists = [np.linalg.norm(cents[part.core[i]].mean(axis=0) - center)
             if part.core[i].size else np.inf
             for i in range(part.n)]
    return int(np.argmin(dists))
