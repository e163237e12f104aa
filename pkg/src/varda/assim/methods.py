"""Analysis methods for one window: incremental 4D-Var, the backpropagation
gradient method with approximate or exact Hessian, and the raw Gauss-Newton
residual step.

All three solve the same nonlinear least-squares problem; on a linear model
with linear H (quadratic cost) they coincide with the dense normal-equations
solution, which the tests pin down.
"""

from __future__ import annotations

import time

import numpy as np

from .. import ad
from ..errors import (
    ContractError,
    DivergenceError,
    LinearSolveError,
    SolverBreakdownError,
)
from ..solvers import bicgstab
from .problem import AnalysisResult, LrSchedule, WindowProblem, cost, lr_value

__all__ = ["incremental_4dvar", "backprop_4dvar", "gauss_newton_residual",
           "lr_value"]


def incremental_4dvar(prob: WindowProblem, outer_loops=3, inner_tol=1e-8,
                      inner_max_iter=None, record_cost=True):
    """Outer nonlinear rollouts + inner linearized least-squares corrections.

    Each outer loop linearizes the model along the current trajectory, forms
    the innovation vector d_i = y_i - H(x_i), and solves

        [B^-1 + sum_i M_i^T H_i^T R_i^-1 H_i M_i] dx0
            = B^-1 (xb - x0) + sum_i M_i^T H_i^T R_i^-1 d_i

    with matrix-free BiCGSTAB, then updates x0 <- x0 + dx0.
    """
    t_start = time.perf_counter()
    x = prob.background.copy()
    hop = prob.obs_operator
    b_inv = prob.B.inv_variance
    r_inv = prob.obs.noise_spec.inv_variance
    costs = [float(cost(x, prob))] if record_cost else []

    for k in range(outer_loops):
        lin, traj = prob.model.linearize(x, prob.window_steps)
        innovations = {
            t: prob.obs.values[i] - hop.forward(traj[t])
            for i, t in enumerate(prob.obs.times)
        }

        def apply_a(dx):
            tangents = lin.tlm(dx)
            seeds = {
                t: hop.adjoint(r_inv * hop.forward(tangents[t]))
                for t in prob.obs.times
            }
            return b_inv * dx + lin.adjoint(seeds)

        rhs = b_inv * (prob.background - x) + lin.adjoint(
            {t: hop.adjoint(r_inv * d) for t, d in innovations.items()}
        )
        try:
            dx0, report = bicgstab(apply_a, rhs, tol=inner_tol,
                                   max_iter=inner_max_iter)
        except SolverBreakdownError as err:
            raise SolverBreakdownError(
                f"inner solve breakdown at outer loop {k}: {err}",
                report=err.report,
            ) from err
        x = x + dx0
        if record_cost:
            costs.append(float(cost(x, prob)))

    return AnalysisResult(
        analysis=x,
        cost_history=costs,
        wall_time=time.perf_counter() - t_start,
        iterations=outer_loops,
    )


def _approx_hessian_solver(prob: WindowProblem, inner_tol, inner_max_iter):
    """Return a callable g -> [B^-1 + H0^T R^-1 H0]^-1 g.

    With a selection H and diagonal R the operator is diagonal and the solve
    is an elementwise division; otherwise it falls back to BiCGSTAB.  When no
    observation falls at the window start, H0 contributes nothing and the
    update degenerates to B-scaled descent.
    """
    b_inv = prob.B.inv_variance
    r_inv = prob.obs.noise_spec.inv_variance
    has_t0 = 0 in prob.obs.times
    if not has_t0:
        diag = b_inv
        return lambda g: g / diag
    diag_h0 = prob.obs_operator.quadratic_diag(r_inv)
    if diag_h0 is not None:
        diag = b_inv + diag_h0
        return lambda g: g / diag
    quad = prob.obs_operator.quadratic_apply(r_inv)

    def solve(g):
        x, report = bicgstab(lambda v: b_inv * v + quad(v), g,
                             tol=inner_tol, max_iter=inner_max_iter)
        return x

    return solve


def backprop_4dvar(prob: WindowProblem, iterations=3,
                   lr: LrSchedule = LrSchedule(0.5, 0.5),
                   hessian_mode="approximate", hessian_max_dim=4096,
                   inner_tol=1e-8, inner_max_iter=None, record_cost=True):
    """Gradient-based Gauss-Newton iteration on the full nonlinear cost.

    Per iteration k: g = grad J(x0), then either

    * ``approximate``: solve [B^-1 + H0^T R^-1 H0] step = g and update
      x0 <- x0 - alpha_k * step with alpha_k = alpha0 * decay**k, or
    * ``exact``: assemble the full Hessian of J by reverse-over-reverse
      autodiff, solve H step = g, and update with alpha = 1.
    """
    if hessian_mode not in ("approximate", "exact"):
        raise ContractError(f"unknown hessian_mode {hessian_mode!r}")
    t_start = time.perf_counter()
    x = prob.background.copy()
    history = [x.copy()]
    costs = [float(cost(x, prob))] if record_cost else []
    j_fn = lambda xv: cost(xv, prob)
    approx_solve = None
    if hessian_mode == "approximate":
        approx_solve = _approx_hessian_solver(prob, inner_tol, inner_max_iter)

    for k in range(iterations):
        try:
            g = ad.grad(j_fn, x, check_finite=False)
        except DivergenceError as err:
            raise DivergenceError(
                f"rollout diverged at iteration {k}: {err}",
                step=k, history=history,
            ) from err
        if not np.all(np.isfinite(g)):
            raise DivergenceError(
                f"non-finite gradient at iteration {k} (exploding gradients)",
                step=k, history=history,
            )
        if hessian_mode == "approximate":
            x = x - lr_value(lr, k) * approx_solve(g)
        else:
            hess = ad.hessian(j_fn, x, max_dim=hessian_max_dim,
                              check_finite=False)
            try:
                step = np.linalg.solve(hess, g)
            except np.linalg.LinAlgError as err:
                raise LinearSolveError(
                    f"exact Hessian solve failed at iteration {k}: {err}"
                ) from err
            x = x - step
        history.append(x.copy())
        if record_cost:
            costs.append(float(cost(x, prob)))

    return AnalysisResult(
        analysis=x,
        cost_history=costs,
        wall_time=time.perf_counter() - t_start,
        iterations=iterations,
    )


def gauss_newton_residual(apply_jac, apply_jac_t, residual, tol=1e-8,
                          max_iter=None, x0=None):
    """One Gauss-Newton step: solve F^T F r = -F^T f for the residual update.

    ``apply_jac``/``apply_jac_t`` are the matrix-free Jacobian and transposed
    Jacobian of the stacked residual f at the current point; the caller
    applies ``x + r``.  Returns ``(r, solve report)``.
    """
    residual = np.asarray(residual, dtype=np.float64)
    rhs = -np.asarray(apply_jac_t(residual))
    apply_a = lambda v: np.asarray(apply_jac_t(np.asarray(apply_jac(v))))
    return bicgstab(apply_a, rhs, x0=x0, tol=tol, max_iter=max_iter)
