"""Reduced Schur-complement system in the trace unknowns and its PCG solve.

The reduced operator  S = C - sum_i Bt_i' diag(1/Lambda_i) Bt_i  is applied
matrix-free from the per-subdomain reduced bundles.  The preconditioner is
the exact diagonal of S, assembled from the bundles' d_i vectors.  The
spectral condition number of the preconditioned operator is estimated from
the CG coefficients via the Lanczos tridiagonal matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp


@dataclass
class PCGResult:
    x: np.ndarray
    iterations: int
    converged: bool
    kappa: float
    residuals: list[float]       # preconditioned residual norms sqrt(r'z)
    energies: list[float]        # 1/2 x'Sx - b'x per iterate


def pcg(apply_op, rhs: np.ndarray, diag: np.ndarray, tol: float = 1e-10,
        maxiter: int = 20000) -> PCGResult:
    """Preconditioned conjugate gradients with a diagonal preconditioner.

    Stops when the preconditioned residual norm falls below tol relative
    to its initial value.  Starts from zero.
    """
    n = rhs.size
    if n == 0:
        return PCGResult(np.zeros(0), 0, True, 1.0, [0.0], [0.0])
    if (np.asarray(diag) <= 0).any():
        raise ValueError("preconditioner diagonal must be positive")
    r = rhs.copy()
    z = r / diag
    rz = float(r @ z)
    res0 = np.sqrt(rz)
    if res0 == 0.0:
        return PCGResult(np.zeros(n), 0, True, 1.0, [0.0], [0.0])
    x = np.zeros(n)
    p = z.copy()
    resids = [res0]
    energies = [0.0]
    alphas: list[float] = []
    betas: list[float] = []
    converged = False
    iters = 0
    for k in range(maxiter):
        Ap = apply_op(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise RuntimeError(
                f"operator not positive definite (p'Ap = {pAp:.3e} at iter {k})")
        alpha = rz / pAp
        x += alpha * p
        energies.append(energies[-1] - 0.5 * alpha * rz)
        r -= alpha * Ap
        z = r / diag
        rz_new = float(r @ z)
        resids.append(np.sqrt(max(rz_new, 0.0)))
        alphas.append(alpha)
        iters = k + 1
        if resids[-1] <= tol * res0:
            converged = True
            break
        beta = rz_new / rz
        betas.append(beta)
        p = z + beta * p
        rz = rz_new
    kappa = _lanczos_condition(alphas, betas[:len(alphas) - 1])
    return PCGResult(x, iters, converged, kappa, resids, energies)


def _lanczos_condition(alphas, betas) -> float:
    """Condition estimate of the preconditioned operator from CG coefficients."""
    k = len(alphas)
    if k < 2:
        return 1.0
    d = np.empty(k)
    e = np.empty(k - 1)
    d[0] = 1.0 / alphas[0]
    for j in range(1, k):
        d[j] = 1.0 / alphas[j] + betas[j - 1] / alphas[j - 1]
    for j in range(k - 1):
        e[j] = np.sqrt(betas[j]) / alphas[j]
    ev = sla.eigh_tridiagonal(d, e, eigvals_only=True)
    lo = ev.min()
    if lo <= 0:
        return float("inf")
    return float(ev.max() / lo)


@dataclass
class SchurProblem:
    """Matrix-free reduced system: operator, right-hand side, preconditioner."""

    C: sp.csr_matrix
    bundles: list
    rhs: np.ndarray
    diag: np.ndarray
    tol: float = 1e-10
    maxiter: int = 20000


def build_schur_problem(C: sp.csr_matrix, bundles, tol: float = 1e-10,
                        maxiter: int = 20000) -> SchurProblem:
    K = C.shape[0]
    rhs = np.zeros(K)
    diag = np.asarray(C.diagonal()).copy()
    for bu in bundles:
        if bu.lam.size == 0:
            continue
        rhs[bu.trace_cols] -= bu.B_t.T @ (bu.f_t / bu.lam)
        diag[bu.trace_cols] -= bu.d
    if K and (diag <= 0).any():
        raise RuntimeError("reduced Schur diagonal not positive")
    return SchurProblem(C, list(bundles), rhs, diag, tol, maxiter)


def schur_apply(problem: SchurProblem, y: np.ndarray) -> np.ndarray:
    out = problem.C @ y
    for bu in problem.bundles:
        if bu.lam.size == 0:
            continue
        t = bu.B_t @ y[bu.trace_cols]
        out[bu.trace_cols] -= bu.B_t.T @ (t / bu.lam)
    return out


def solve_schur(problem: SchurProblem) -> PCGResult:
    return pcg(lambda y: schur_apply(problem, y), problem.rhs, problem.diag,
               problem.tol, problem.maxiter)


@dataclass
class Solution:
    """Reduced solution: trace coefficients plus per-subdomain data."""

    beta0: np.ndarray
    beta_t: list[np.ndarray]          # reduced coefficients per subdomain
    beta: list[np.ndarray] | None     # volume coefficients (if Q stored)
    energies: np.ndarray              # beta_t' Kstiff_t beta_t per subdomain
    iterations: int
    kappa: float
    converged: bool


def back_substitute(problem: SchurProblem, result: PCGResult) -> Solution:
    beta0 = result.x
    beta_t, beta, energies = [], [], []
    have_q = True
    for bu in problem.bundles:
        if bu.lam.size == 0:
            bt = np.zeros(0)
        else:
            bt = (bu.f_t - bu.B_t @ beta0[bu.trace_cols]) / bu.lam
        beta_t.append(bt)
        energies.append(float(bt @ (bu.K_stiff_t @ bt)) if bt.size else 0.0)
        if getattr(bu, "Q", None) is not None:
            beta.append(bu.Q @ bt)
        else:
            have_q = False
    return Solution(beta0, beta_t, beta if have_q else None,
                    np.array(energies), result.iterations, result.kappa,
                    result.converged)
