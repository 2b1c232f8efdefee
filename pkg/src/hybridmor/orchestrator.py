"""Main-process workflow: plan tasks, run workers, assemble and solve.

The main process partitions the mesh, numbers the skeleton trace space
and writes one task bundle per subdomain.  Worker processes are plain
subprocesses that each read one task, run the local reduction pipeline
and write one result bundle; they never communicate with each other.
The main process then concatenates the reduced blocks, solves the trace
system by preconditioned CG and evaluates the error functionals.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import os
import resource
import subprocess
import sys
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import bundles, fem, hybrid, mesh as hmesh, mor, solver
from .config import RunConfig

log = logging.getLogger(__name__)

#: exit code used by the fault-injection hook (see worker_main)
FAIL_ONCE_EXIT = 7
FAIL_ONCE_ENV = "HYBRIDMOR_FAIL_ONCE"

REPORT_COLUMNS = ("dim_v", "n", "h", "eps", "energy_error",
                  "reduction_error", "dim_s", "dim_lambda", "nnz_proxy",
                  "cg_iters", "kappa", "converged", "reduction_pct")
TIMING_COLUMNS = ("dim_v", "n", "eps", "t_setup", "t_tasks", "t_workers",
                  "t_assemble", "t_solve", "t_oracle", "worker_cpu",
                  "worker_rss_max")


@dataclass
class Problem:
    """Partitioned mesh with its trace numbering, ready for planning."""

    mesh: hmesh.Mesh
    partition: hmesh.Partition
    skeleton: hmesh.Skeleton
    trace: hybrid.TraceSpace
    view: hybrid.FreeTraceView
    dim_v: int
    h_max: float
    r: float


def _partition_hash(part: hmesh.Partition) -> str:
    digest = hashlib.sha256()
    digest.update(part.part_of.tobytes())
    for ext in part.ext:
        digest.update(ext.tobytes())
    return digest.hexdigest()


def build_problem(cfg: RunConfig, divisions: int | None = None,
                  n: int | None = None) -> Problem:
    """Mesh, partition (verified deterministic), skeleton and trace space."""
    if cfg.mesh is not None:
        m = hmesh.read_msh(cfg.mesh)
    else:
        m = hmesh.generate_structured_mesh(
            cfg.dim, divisions if divisions is not None else cfg.divisions)
    n = n if n is not None else cfg.n
    r = cfg.r_value * hmesh.min_edge_length(m) if cfg.r_relative \
        else cfg.r_value

    def make_partition():
        part = hmesh.partition_elements(m, n, method=cfg.partition,
                                        path=cfg.partition_file)
        return hmesh.extend_subdomains(m, part, r)

    part = make_partition()
    if _partition_hash(part) != _partition_hash(make_partition()):
        raise RuntimeError("nondeterministic partition detected: "
                           "hash mismatch across two runs")
    for i in range(part.n):
        if part.core[i].size == 0:
            log.warning("subdomain %d received no elements", i)
    skel = hmesh.extract_skeleton(m, part)
    trace = hybrid.build_trace_space(m, skel, cfg.p)
    view = hybrid.FreeTraceView(trace)
    dim_v = fem.build_dofmap(m, np.arange(m.num_elements), cfg.p).ndof
    h_max = float(hmesh.element_diameters(m.vertices, m.elements).max())
    return Problem(m, part, skel, trace, view, dim_v, h_max, r)


def plan_and_write_tasks(problem: Problem, cfg: RunConfig,
                         task_dir) -> list[str]:
    """One task bundle per subdomain, each in its own directory."""
    m, part, view = problem.mesh, problem.partition, problem.view
    dverts, dedges = fem.boundary_nodes(m)
    dvset = np.zeros(m.num_vertices, dtype=bool)
    dvset[dverts] = True
    os.makedirs(task_dir, exist_ok=True)
    paths = []
    for i in range(part.n):
        local, vert_map = hmesh.submesh(m, part.ext[i])
        new_id = -np.ones(m.num_vertices, dtype=np.int64)
        new_id[vert_map] = np.arange(vert_map.size)
        core_mask = np.isin(part.ext[i], part.core[i]).astype("u1")
        shipped = np.zeros(m.num_vertices, dtype=bool)
        shipped[vert_map] = True
        dv_local = np.flatnonzero(dvset[vert_map])
        keep_e = shipped[dedges].all(axis=1)
        de_local = new_id[dedges[keep_e]]
        facets = hybrid.subdomain_facets(problem.skeleton, i)
        rows = view.facet_dofs_many(facets) if len(facets) else \
            np.empty((0, 0), dtype=np.int64)
        task = bundles.Task(
            sub_id=i, dim=m.dim, p=cfg.p, alpha=cfg.alpha,
            h_i=float(part.h[i]), eps=np.asarray(cfg.eps, dtype=float),
            load=cfg.load, load_degree=cfg.load_degree,
            store_q=cfg.store_q, n_free_trace=view.ndof,
            vertices=local.vertices, elements=local.elements,
            core_mask=core_mask, boundary_facets=local.boundary_facets,
            dir_verts=dv_local, dir_edges=de_local,
            skel_facets=new_id[np.asarray(facets)] if len(facets) else
            np.empty((0, m.dim), dtype=np.int64),
            skel_rows=rows)
        sub_dir = os.path.join(task_dir, f"{i:05d}")
        os.makedirs(sub_dir, exist_ok=True)
        path = os.path.join(sub_dir, "task.bundle")
        bundles.write_task(path, task)
        paths.append(path)
    covered = np.concatenate([part.core[i] for i in range(part.n)])
    if np.unique(covered).size != m.num_elements:
        raise RuntimeError("task cores do not cover the element set")
    return paths


def worker_main(task_path, out_path=None) -> str:
    """Process one task bundle and write the result bundle next to it.

    Standalone entry point (also used by the CLI ``worker`` command) so a
    task can be processed on any machine that has this package and the
    task file.
    """
    t_all = time.perf_counter()
    fail_key = os.environ.get(FAIL_ONCE_ENV)
    if fail_key and fail_key in str(task_path):
        sentinel = os.path.join(os.path.dirname(task_path), ".failed_once")
        if not os.path.exists(sentinel):
            with open(sentinel, "w") as fh:
                fh.write("injected fault\n")
            log.error("fault injection: aborting task %s", task_path)
            os._exit(FAIL_ONCE_EXIT)

    task = bundles.read_task(task_path)
    local = hmesh.Mesh(task.dim, task.vertices, task.elements,
                       task.boundary_facets)
    core = np.flatnonzero(task.core_mask)
    ext = np.arange(local.num_elements)
    trace_view = hybrid.ShippedTraceView(task.skel_facets, task.skel_rows,
                                         task.n_free_trace)
    load_fn, _, _ = fem.get_load(task.load, task.dim)
    load_degree = None if task.load_degree < 0 else task.load_degree
    dirichlet = (task.dir_verts, task.dir_edges.reshape(-1, 2))

    times = np.zeros(len(bundles.TIMING_FIELDS))
    t0 = time.perf_counter()
    blocks = hybrid.assemble_blocks_core(
        local, core, task.h_i, task.skel_facets, trace_view, task.sub_id,
        task.p, task.alpha, load_fn, load_degree, keep_diagnostics=True,
        dirichlet_nodes=dirichlet)
    times[0] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ext_sys = mor.build_extended_system(local, blocks.dofmap, ext, task.p,
                                        dirichlet)
    times[1] = time.perf_counter() - t0

    t0 = time.perf_counter()
    Z = mor.build_lifting(ext_sys)
    w_f = mor.particular_solution(ext_sys, local, load_fn, load_degree)
    times[2] = time.perf_counter() - t0

    t0 = time.perf_counter()
    M, N = mor.build_weights(ext_sys, blocks.K_stiff, blocks.Mb, task.h_i)
    times[3] = time.perf_counter() - t0

    t0 = time.perf_counter()
    U, sigma, L_M = mor.weighted_svd(Z, M, N)
    times[4] = time.perf_counter() - t0
    ext_sys._lu_K = None
    factors = mor.SubdomainFactors(blocks, ext_sys.n_ext_dofs, sigma, w_f,
                                   M, U, L_M)

    t0 = time.perf_counter()
    reduced = [mor.bundle_from_factors(factors, e, store_q=task.store_q)
               for e in task.eps]
    times[5] = time.perf_counter() - t0
    times[6] = time.perf_counter() - t_all

    res = bundles.Result(
        sub_id=task.sub_id, h_i=task.h_i, m=blocks.m,
        n_ext=ext_sys.n_ext_dofs, eps=task.eps, sigma=sigma,
        trace_cols=blocks.trace_cols, c_rows=blocks.c_rows,
        c_cols=blocks.c_cols, c_vals=blocks.c_vals, reduced=reduced,
        dof_coords=blocks.dofmap.node_coords[blocks.dofmap.free]
        if task.store_q else None)
    out_path = out_path or os.path.join(os.path.dirname(task_path),
                                        "result.bundle")
    bundles.write_result(out_path, res)
    bundles.write_meta(
        out_path + ".meta", times,
        resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024.0)
    return out_path


def _worker_env() -> dict:
    env = dict(os.environ)
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        env[var] = "1"
    return env


def run_workers(task_paths, worker_count: int) -> list[str]:
    """Run one worker subprocess per task, at most worker_count at once.

    A failed task is retried once; a second failure aborts with the
    subdomain id.  Workers share nothing: each reads its own task file
    and writes into its own directory.
    """
    if worker_count < 1:
        raise ValueError("worker_count must be >= 1")
    env = _worker_env()
    pending = list(enumerate(task_paths))
    attempts = {i: 0 for i, _ in pending}
    running: list[tuple[int, subprocess.Popen]] = []
    results = [None] * len(task_paths)

    def launch(idx, path):
        attempts[idx] += 1
        proc = subprocess.Popen(
            [sys.executable, "-m", "hybridmor.cli", "worker", "--task",
             str(path)],
            env=env, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE)
        running.append((idx, proc))

    while pending or running:
        while pending and len(running) < worker_count:
            launch(*pending.pop(0))
        idx, proc = running.pop(0)
        _, err = proc.communicate()
        if proc.returncode != 0:
            if attempts[idx] >= 2:
                raise RuntimeError(
                    f"worker for subdomain {idx} failed twice "
                    f"(exit {proc.returncode}): {err.decode(errors='replace')}")
            log.warning("worker for subdomain %d exited %d; retrying",
                        idx, proc.returncode)
            launch(idx, task_paths[idx])
        else:
            results[idx] = os.path.join(os.path.dirname(task_paths[idx]),
                                        "result.bundle")
    return results


@dataclass
class RunResult:
    """Everything assemble_and_solve measured for one eps value."""

    eps: float
    solution: solver.Solution
    energy_error: float | None
    reduction_error: float | None
    dim_s: int
    dim_lambda: int
    nnz_proxy: int
    t_solve: float


def assemble_trace_matrix(results: list[bundles.Result],
                          n_free: int) -> sp.csr_matrix:
    rows = np.concatenate([r.c_rows for r in results])
    cols = np.concatenate([r.c_cols for r in results])
    vals = np.concatenate([r.c_vals for r in results])
    return sp.coo_matrix((vals, (rows, cols)),
                         shape=(n_free, n_free)).tocsr()


def assemble_and_solve(results: list[bundles.Result], n_free: int,
                       cfg: RunConfig, oracle_energies=None,
                       exact_energy=None) -> list[RunResult]:
    """Solve the reduced trace system once per configured eps."""
    results = sorted(results, key=lambda r: r.sub_id)
    if [r.sub_id for r in results] != list(range(len(results))):
        missing = set(range(len(results))) - {r.sub_id for r in results}
        raise RuntimeError(f"missing result bundles for subdomains "
                           f"{sorted(missing)}")
    C = assemble_trace_matrix(results, n_free)
    out = []
    for j, eps in enumerate(cfg.eps):
        t0 = time.perf_counter()
        red = [r.reduced[j] for r in results]
        prob = solver.build_schur_problem(C, red, tol=cfg.tol,
                                          maxiter=cfg.maxiter)
        sol = solver.back_substitute(prob, solver.solve_schur(prob))
        t_solve = time.perf_counter() - t0
        dim_lambda = sum(b.lam.size for b in red)
        nnz_proxy = C.nnz + sum(b.B_t.size for b in red)
        err = None if exact_energy is None else \
            hybrid.energy_error(sol.energies, exact_energy)
        red_err = None if oracle_energies is None else \
            hybrid.reduction_error(oracle_energies, sol.energies)
        out.append(RunResult(eps, sol, err, red_err, n_free, dim_lambda,
                             nnz_proxy, t_solve))
    return out


def conforming_oracle(problem: Problem, cfg: RunConfig):
    """Per-subdomain gradient energies of the conforming FEM solution."""
    load_fn, _, _ = fem.get_load(cfg.load, problem.mesh.dim)
    dm, u, _ = fem.conforming_solve(problem.mesh, cfg.p, load_fn)
    part = problem.partition
    return np.array([fem.gradient_energy(problem.mesh, dm, u, part.core[i])
                     for i in range(part.n)])


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def _auto_spectrum_id(problem: Problem) -> int:
    """Subdomain whose core centroid is nearest the domain center."""
    m, part = problem.mesh, problem.partition
    center = 0.5 * (m.vertices.min(axis=0) + m.vertices.max(axis=0))
    cents = m.vertices[m.elements].mean(axis=1)
    dists = [np.linalg.norm(cents[part.core[i]].mean(axis=0) - center)
             if part.core[i].size else np.inf for i in range(part.n)]
    return int(np.argmin(dists))


def run_study(cfg: RunConfig, out_dir=None) -> str:
    """Execute the configured runs and write the report files.

    Returns the path of report.csv.  Deterministic columns go to
    report.csv; wall-clock measurements go to timings.csv so report
    bytes are reproducible across runs.
    """
    out_dir = out_dir or cfg.out
    os.makedirs(out_dir, exist_ok=True)
    if cfg.mode == "h-sweep":
        combos = [(d, cfg.n_list[k] if cfg.n_list else cfg.n)
                  for k, d in enumerate(cfg.divisions_list)]
    elif cfg.mode == "n-sweep":
        combos = [(cfg.divisions, n) for n in cfg.n_list]
    else:
        combos = [(cfg.divisions, cfg.n)]

    rows, trows = [], []
    for divisions, n in combos:
        t0 = time.perf_counter()
        problem = build_problem(cfg, divisions, n)
        t_setup = time.perf_counter() - t0

        t0 = time.perf_counter()
        task_dir = os.path.join(out_dir, f"tasks_d{divisions}_n{n}")
        tasks = plan_and_write_tasks(problem, cfg, task_dir)
        t_tasks = time.perf_counter() - t0

        t0 = time.perf_counter()
        result_paths = run_workers(tasks, cfg.workers)
        t_workers = time.perf_counter() - t0

        t0 = time.perf_counter()
        results = [bundles.read_result(p) for p in result_paths]
        t_assemble = time.perf_counter() - t0

        t0 = time.perf_counter()
        oracle_e = conforming_oracle(problem, cfg) if cfg.oracle else None
        t_oracle = time.perf_counter() - t0

        _, _, exact_energy = fem.get_load(cfg.load, problem.mesh.dim)
        runs = assemble_and_solve(results, problem.view.ndof, cfg,
                                  oracle_e, exact_energy)
        metas = [bundles.read_meta(p + ".meta") for p in result_paths]
        worker_cpu = sum(meta["total"] for meta in metas)
        worker_rss = max(meta["peak_rss"] for meta in metas)
        for run in runs:
            rows.append({
                "dim_v": problem.dim_v, "n": n, "h": problem.h_max,
                "eps": run.eps, "energy_error": run.energy_error,
                "reduction_error": run.reduction_error,
                "dim_s": run.dim_s, "dim_lambda": run.dim_lambda,
                "nnz_proxy": run.nnz_proxy,
                "cg_iters": run.solution.iterations,
                "kappa": run.solution.kappa,
                "converged": int(run.solution.converged),
                "reduction_pct": 1.0 - run.dim_lambda / problem.dim_v,
            })
            trows.append({
                "dim_v": problem.dim_v, "n": n, "eps": run.eps,
                "t_setup": t_setup, "t_tasks": t_tasks,
                "t_workers": t_workers, "t_assemble": t_assemble,
                "t_solve": run.t_solve, "t_oracle": t_oracle,
                "worker_cpu": worker_cpu, "worker_rss_max": worker_rss,
            })

        _write_spectra(cfg, problem, results, out_dir, divisions, n)
        if cfg.store_q:
            _write_solutions(results, runs[-1], problem.mesh.dim, out_dir)

    report = os.path.join(out_dir, "report.csv")
    _write_csv(report, REPORT_COLUMNS, rows)
    _write_csv(os.path.join(out_dir, "timings.csv"), TIMING_COLUMNS, trows)
    if cfg.mode == "h-sweep":
        _write_slopes(os.path.join(out_dir, "slopes.csv"), rows)
    return report


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _write_spectra(cfg, problem, results, out_dir, divisions, n) -> None:
    if cfg.spectrum == "none":
        return
    ids = ([_auto_spectrum_id(problem)] if cfg.spectrum == "auto"
           else list(cfg.spectrum))
    for i in ids:
        path = os.path.join(out_dir, f"spectrum_d{divisions}_n{n}_{i}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("index", "sigma"))
            for j, s in enumerate(results[i].sigma):
                writer.writerow((j, format(float(s), ".12g")))


def _write_solutions(results, run: RunResult, dim: int, out_dir) -> None:
    if run.solution.beta is None:
        return
    for res, beta in zip(results, run.solution.beta):
        bundles.write_solution(
            os.path.join(out_dir, f"solution_{res.sub_id}.bin"),
            res.sub_id, dim, beta, res.dof_coords)


def _write_slopes(path, rows) -> None:
    """Log-log regression of energy_error against h, one row per eps."""
    by_eps: dict[float, list] = {}
    for row in rows:
        if row["energy_error"] is not None:
            by_eps.setdefault(row["eps"], []).append(
                (row["h"], row["energy_error"]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("eps", "points", "slope"))
        for eps, pts in sorted(by_eps.items()):
            if len(pts) < 2:
                continue
            hs = np.log([abs(p[0]) for p in pts])
            es = np.log([abs(p[1]) for p in pts])
            slope = float(np.polyfit(hs, es, 1)[0])
            writer.writerow((_fmt(eps), len(pts), format(slope, ".12g")))
