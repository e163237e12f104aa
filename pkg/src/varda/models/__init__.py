"""Differentiable forecast models.

Every model exposes the same informal handle protocol used by the
assimilation layer:

``dim``
    length of the (flat, real) state vector,
``rollout(x0, n_steps)``
    trajectory from ``x0`` (plain array in, ``(n_steps+1, dim)`` array out;
    traced variable in, list of traced states out),
``linearize(x0, n_steps)``
    matrix-free TLM/adjoint pair along the nonlinear trajectory, plus the
    trajectory values.
"""

from .lorenz96 import (
    Lorenz96Params,
    l96_tendency,
    l96_jacobian_dense,
    l96_tlm_adjoint,
    L96Model,
)
from .qg import QGParams, QGGrid, QGModel, qg_pv_inversion, qg_tendency
from .linear import LinearModel
from .linearize import RKTrajectoryLinearization
from . import profiles

__all__ = [
    "Lorenz96Params", "l96_tendency", "l96_jacobian_dense", "l96_tlm_adjoint",
    "L96Model", "QGParams", "QGGrid", "QGModel", "qg_pv_inversion",
    "qg_tendency", "LinearModel", "RKTrajectoryLinearization", "profiles",
]
