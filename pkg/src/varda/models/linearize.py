"""Tangent-linear/adjoint propagators along explicit Runge-Kutta trajectories.

The nonlinear rollout stores (or recomputes) the state at every RK stage;
linearizing each stage gives a chain of Jacobian actions whose composition is
the window TLM.  Running the same chain in reverse with transposed actions is
the adjoint.  Stage Jacobians can be supplied either matrix-free (action
closures) or as dense matrices; the dense form reproduces the classic
"explicitly coded TLM" whose inner-loop cost grows quadratically with the
state dimension.
"""

from __future__ import annotations

import numpy as np


class RKTrajectoryLinearization:
    """TLM/adjoint pair for a fixed-step explicit RK rollout.

    Parameters
    ----------
    dt : step size.
    tableau : (a_rows, b) Butcher data matching the nonlinear integration.
    stage_ops : list over steps of lists over stages of ``(mv, rmv)`` pairs,
        the Jacobian action and transposed action at each stored stage state.
    dim : state dimension.
    """

    def __init__(self, dt, tableau, stage_ops, dim):
        self.dt = dt
        self.a_rows, self.b = tableau
        self.stage_ops = stage_ops
        self.dim = dim
        self.n_steps = len(stage_ops)

    def _step_tangent(self, s, v):
        dt = self.dt
        ops = self.stage_ops[s]
        dks = []
        for i, row in enumerate(self.a_rows):
            vs = v
            for aij, dk in zip(row, dks):
                if aij != 0.0:
                    vs = vs + (dt * aij) * dk
            dks.append(ops[i][0](vs))
        out = v
        for bi, dk in zip(self.b, dks):
            if bi != 0.0:
                out = out + (dt * bi) * dk
        return out

    def _step_adjoint(self, s, w):
        dt = self.dt
        ops = self.stage_ops[s]
        n_stage = len(self.a_rows)
        sigma = [None] * n_stage
        for i in range(n_stage - 1, -1, -1):
            mu = (dt * self.b[i]) * w
            for m in range(i + 1, n_stage):
                ami = self.a_rows[m][i]
                if ami != 0.0:
                    mu = mu + (dt * ami) * sigma[m]
            sigma[i] = ops[i][1](mu)
        out = w
        for sg in sigma:
            out = out + sg
        return out

    def tlm(self, v):
        """Propagate one tangent; returns tangents at all n_steps+1 states."""
        v = np.asarray(v, dtype=np.float64)
        out = np.empty((self.n_steps + 1, self.dim))
        out[0] = v
        for s in range(self.n_steps):
            v = self._step_tangent(s, v)
            out[s + 1] = v
        return out

    def adjoint(self, seeds):
        """Back-propagate cotangents seeded at any subset of states.

        ``seeds``: dict step->vector, or an (n_steps+1, dim) array.  Returns
        sum_i M_i^T w_i at the initial state.
        """
        if not isinstance(seeds, dict):
            seeds = {i: seeds[i] for i in range(len(seeds))}
        w = np.zeros(self.dim)
        for s in range(self.n_steps, 0, -1):
            ws = seeds.get(s)
            if ws is not None:
                w = w + np.asarray(ws, dtype=np.float64)
            w = self._step_adjoint(s - 1, w)
        w0 = seeds.get(0)
        if w0 is not None:
            w = w + np.asarray(w0, dtype=np.float64)
        return w


def dense_stage_ops(stage_states, jacobian_dense):
    """Assemble per-stage dense Jacobians and return (mv, rmv) pairs."""
    ops = []
    for states in stage_states:
        row = []
        for xs in states:
            jac = jacobian_dense(xs)
            jac_t = jac.T.copy()
            row.append((jac.dot, jac_t.dot))
        ops.append(row)
    return ops


def action_stage_ops(stage_states, jac_action, jac_t_action):
    """Matrix-free (mv, rmv) pairs closed over the stored stage states."""
    ops = []
    for states in stage_states:
        row = []
        for xs in states:
            row.append(
                (
                    (lambda v, _x=xs: jac_action(_x, v)),
                    (lambda w, _x=xs: jac_t_action(_x, w)),
                )
            )
        ops.append(row)
    return ops
