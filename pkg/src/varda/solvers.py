"""Matrix-free BiCGSTAB for the inner linear solves.

The operator is only ever touched through ``apply_a``; no matrix is formed.
Follows van der Vorst's formulation with the usual two convergence checks per
iteration (after the CGS half-step and after the stabilizing step).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, SolverBreakdownError

__all__ = ["LinearSolveReport", "bicgstab"]


@dataclass
class LinearSolveReport:
    iterations: int
    final_residual_norm: float
    converged: bool


def bicgstab(apply_a, b, x0=None, tol=1e-8, max_iter=None):
    """Solve A x = b with the BiCGSTAB iteration.

    Parameters
    ----------
    apply_a : callable(vector) -> vector, the matrix-free operator.
    b : right-hand side.
    x0 : initial guess (zero if omitted).
    tol : relative tolerance on ||Ax - b|| / ||b||.
    max_iter : iteration cap; default 10 * len(b).

    Returns ``(x, LinearSolveReport)``.  Hitting the cap returns the best
    iterate with ``converged=False``; a rho/omega breakdown raises
    :class:`SolverBreakdownError` carrying the report so far.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    if tol <= 0:
        raise ContractError("tol must be positive")
    if max_iter is None:
        max_iter = 10 * n

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    if x.any():
        ax = np.asarray(apply_a(x))
        if ax.size != n:
            raise ContractError("apply_a output length does not match b")
        r = b - ax
    else:
        r = b.copy()

    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros(n), LinearSolveReport(0, 0.0, True)
    threshold = tol * b_norm

    r_norm = np.linalg.norm(r)
    if r_norm <= threshold:
        return x, LinearSolveReport(0, float(r_norm), True)

    r0 = r.copy()
    rho = alpha = omega = 1.0
    p = np.zeros(n)
    v = np.zeros(n)
    tiny = np.finfo(float).tiny

    for k in range(1, max_iter + 1):
        rho_new = float(np.dot(r0, r))
        if abs(rho_new) < tiny * 1e3:
            raise SolverBreakdownError(
                f"rho breakdown at iteration {k}",
                report=LinearSolveReport(k - 1, float(r_norm), False),
            )
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        v = np.asarray(apply_a(p))
        if k == 1 and v.size != n:
            raise ContractError("apply_a output length does not match b")
        denom = float(np.dot(r0, v))
        if abs(denom) < tiny * 1e3:
            raise SolverBreakdownError(
                f"r0.v breakdown at iteration {k}",
                report=LinearSolveReport(k - 1, float(r_norm), False),
            )
        alpha = rho / denom
        s = r - alpha * v
        s_norm = np.linalg.norm(s)
        if s_norm <= threshold:
            x = x + alpha * p
            return x, LinearSolveReport(k, float(s_norm), True)
        t = np.asarray(apply_a(s))
        tt = float(np.dot(t, t))
        if tt < tiny * 1e3:
            raise SolverBreakdownError(
                f"omega breakdown at iteration {k}",
                report=LinearSolveReport(k - 1, float(s_norm), False),
            )
        omega = float(np.dot(t, s)) / tt
        if abs(omega) < tiny * 1e3:
            raise SolverBreakdownError(
                f"omega breakdown at iteration {k}",
                report=LinearSolveReport(k - 1, float(s_norm), False),
            )
        x = x + alpha * p + omega * s
        r = s - omega * t
        r_norm = np.linalg.norm(r)
        if r_norm <= threshold:
            return x, LinearSolveReport(k, float(r_norm), True)

    return x, LinearSolveReport(max_iter, float(r_norm), False)
