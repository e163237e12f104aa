"""Lorenz-96 dynamics: cyclic advection, linear damping, constant forcing.

du_k/dt = u_{k-1} (u_{k+1} - u_{k-2}) - u_k + F  on a periodic ring of K sites.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import ad
from ..errors import ContractError
from ..integrate import BUTCHER_TABLEAUS, IntegratorSpec, rk_step, rollout
from .linearize import (
    RKTrajectoryLinearization,
    action_stage_ops,
    dense_stage_ops,
)

__all__ = [
    "Lorenz96Params", "l96_tendency", "l96_jac_action", "l96_jac_t_action",
    "l96_jacobian_dense", "l96_tlm_adjoint", "L96Model",
]


@dataclass(frozen=True)
class Lorenz96Params:
    dim: int
    forcing: float = 8.0

    def __post_init__(self):
        if self.dim < 4:
            raise ContractError("Lorenz-96 needs dim >= 4 (cyclic index k-2)")
        if not np.isfinite(self.forcing):
            raise ContractError("forcing must be finite")


def l96_tendency(u, p: Lorenz96Params):
    """Tendency at state ``u`` (plain array or traced variable)."""
    if np.size(ad._val(u)) != p.dim:
        raise ContractError(f"state length {np.size(ad._val(u))} != dim {p.dim}")
    um1 = ad.roll(u, 1)
    um2 = ad.roll(u, 2)
    up1 = ad.roll(u, -1)
    return um1 * (up1 - um2) - u + p.forcing


def l96_jac_action(u, v):
    """Analytic Jacobian action J(u) v."""
    return (
        np.roll(v, 1) * (np.roll(u, -1) - np.roll(u, 2))
        + np.roll(u, 1) * (np.roll(v, -1) - np.roll(v, 2))
        - v
    )


def l96_jac_t_action(u, w):
    """Analytic transposed Jacobian action J(u)^T w."""
    return (
        np.roll(w, -1) * (np.roll(u, -2) - np.roll(u, 1))
        + np.roll(w, 1) * np.roll(u, 2)
        - np.roll(w, -2) * np.roll(u, -1)
        - w
    )


def l96_jacobian_dense(u):
    """Dense Jacobian of the tendency at ``u``."""
    d = u.size
    idx = np.arange(d)
    jac = np.zeros((d, d))
    jac[idx, (idx - 1) % d] = np.roll(u, -1) - np.roll(u, 2)
    jac[idx, (idx + 1) % d] += np.roll(u, 1)
    jac[idx, (idx - 2) % d] += -np.roll(u, 1)
    jac[idx, idx] += -1.0
    return jac


def _stage_states_along(traj, p, dt, tableau):
    """Recompute the RK stage states for every step of a stored trajectory."""
    f = lambda x: l96_tendency(x, p)
    out = []
    for x in np.asarray(traj)[:-1]:
        _, stages = rk_step(f, x, dt, tableau)
        out.append(stages)
    return out


def l96_tlm_adjoint(traj, p: Lorenz96Params, spec: IntegratorSpec):
    """Matrix-free TLM/adjoint pair along a nonlinear trajectory.

    ``traj`` is the (n_steps+1, dim) output of the nonlinear rollout that used
    ``spec``; the RK stage states are recomputed here.  Returns ``(tlm, adj)``
    where ``tlm(v)`` yields the tangent at every trajectory state and
    ``adj(seeds)`` accumulates sum_i M_i^T w_i back to the initial time.
    """
    scheme = "rk4" if spec.scheme == "ab3" else spec.scheme
    tableau = BUTCHER_TABLEAUS[scheme]
    stages = _stage_states_along(traj, p, spec.dt, tableau)
    ops = action_stage_ops(stages, l96_jac_action, l96_jac_t_action)
    lin = RKTrajectoryLinearization(spec.dt, tableau, ops, p.dim)
    return lin.tlm, lin.adjoint


class L96Model:
    """Forecast-model handle for Lorenz-96.

    ``linearization`` picks how the inner-loop TLM/adjoint is represented:
    ``"dense"`` builds per-stage Jacobian matrices (explicitly coded TLM,
    cost per application grows like dim^2), ``"matrix-free"`` uses the
    analytic roll-based actions, ``"tape"`` differentiates the recorded
    rollout.
    """

    def __init__(self, params: Lorenz96Params, scheme="dopri5", dt=0.01,
                 linearization="dense"):
        if linearization not in ("dense", "matrix-free", "tape"):
            raise ContractError(f"unknown linearization {linearization!r}")
        self.params = params
        self.scheme = scheme
        self.dt = dt
        self.linearization = linearization

    @property
    def dim(self):
        return self.params.dim

    def spec(self, n_steps):
        return IntegratorSpec(self.scheme, self.dt, n_steps)

    def tendency(self, u):
        return l96_tendency(u, self.params)

    def rollout(self, x0, n_steps, check_finite=True):
        return rollout(self.tendency, x0, self.spec(n_steps),
                       check_finite=check_finite)

    def rollout_traced(self, x0_var, n_steps):
        return rollout(self.tendency, x0_var, self.spec(n_steps),
                       check_finite=False)

    def linearize(self, x0, n_steps):
        """Nonlinear rollout plus TLM/adjoint along it."""
        if self.linearization == "tape":
            lin, traj = ad.linearize(
                lambda xv: self.rollout_traced(xv, n_steps), x0
            )
            return lin, traj
        traj = self.rollout(np.asarray(x0, dtype=np.float64), n_steps)
        tableau = BUTCHER_TABLEAUS["rk4" if self.scheme == "ab3" else self.scheme]
        stages = _stage_states_along(traj, self.params, self.dt, tableau)
        if self.linearization == "dense":
            ops = dense_stage_ops(stages, l96_jacobian_dense)
        else:
            ops = action_stage_ops(stages, l96_jac_action, l96_jac_t_action)
        lin = RKTrajectoryLinearization(self.dt, tableau, ops, self.dim)
        return lin, traj
