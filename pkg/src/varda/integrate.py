"""Fixed-step time integrators, differentiable through :mod:`varda.ad`.

All schemes are written against the dispatching ops of the autodiff module,
so the same code integrates plain numpy states and traced variables.  Step
sizes are fixed (no adaptive control): recorded tapes then have identical
structure for every window, and the Dormand-Prince scheme reduces to a
six-stage fifth-order Runge-Kutta method (the seventh stage only feeds the
error estimator, which fixed-step mode does not use).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ad
from .errors import ContractError, DivergenceError

__all__ = ["IntegratorSpec", "step", "rollout", "BUTCHER_TABLEAUS"]

# Explicit Runge-Kutta tableaus as (stage coefficient rows, output weights).
_RK4_A = (
    (),
    (0.5,),
    (0.0, 0.5),
    (0.0, 0.0, 1.0),
)
_RK4_B = (1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0)

_DOPRI5_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0,
     -5103.0 / 18656.0),
)
_DOPRI5_B = (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0,
             -2187.0 / 6784.0, 11.0 / 84.0)

BUTCHER_TABLEAUS = {
    "rk4": (_RK4_A, _RK4_B),
    "dopri5": (_DOPRI5_A, _DOPRI5_B),
}

_SCHEMES = ("rk4", "dopri5", "ab3")

# Adams-Bashforth-3 weights for (f_n, f_{n-1}, f_{n-2}).
_AB3_W = (23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0)


@dataclass(frozen=True)
class IntegratorSpec:
    """Scheme selection: one of ``rk4``, ``dopri5`` (fixed step), ``ab3``."""

    scheme: str
    dt: float
    n_steps: int = 1

    def __post_init__(self):
        if self.scheme not in _SCHEMES:
            raise ContractError(f"unknown scheme {self.scheme!r}; use one of {_SCHEMES}")
        if not self.dt > 0:
            raise ContractError("dt must be positive")
        if self.n_steps < 1:
            raise ContractError("n_steps must be >= 1")


def rk_step(f, x, dt, tableau):
    """One explicit Runge-Kutta step; returns (next state, stage states)."""
    a_rows, b = tableau
    ks = []
    stage_states = []
    for row in a_rows:
        xs = x
        for aij, kj in zip(row, ks):
            if aij != 0.0:
                xs = xs + (dt * aij) * kj
        stage_states.append(xs)
        ks.append(f(xs))
    out = x
    for bi, ki in zip(b, ks):
        if bi != 0.0:
            out = out + (dt * bi) * ki
    return out, stage_states


def step(f, x, spec: IntegratorSpec):
    """Advance one step.  For ``ab3`` this is the startup step (rk4), since a
    single multi-step update needs tendency history that a lone step lacks."""
    scheme = "rk4" if spec.scheme == "ab3" else spec.scheme
    out, _ = rk_step(f, x, spec.dt, BUTCHER_TABLEAUS[scheme])
    return out


def _is_finite_state(x):
    return bool(np.all(np.isfinite(ad._val(x))))


def rollout(f, x0, spec: IntegratorSpec, post_step=None, check_finite=True):
    """Integrate ``spec.n_steps`` steps from ``x0``.

    Returns the full trajectory including ``x0``: an ``(n_steps+1, dim)``
    array for plain input, a list of traced variables for ``Var`` input.
    ``post_step`` (e.g. a spectral filter) is applied to the state after every
    update, including the rk4 startup steps of ``ab3``.
    """
    traced = type(x0) is ad.Var
    states = [x0]
    x = x0
    history = []  # ab3 tendency history, newest first

    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(spec.n_steps):
            if spec.scheme == "ab3" and len(history) >= 2:
                fn = f(x)
                incr = (_AB3_W[0] * fn + _AB3_W[1] * history[0]
                        + _AB3_W[2] * history[1])
                x = x + spec.dt * incr
                history = [fn, history[0]]
            else:
                if spec.scheme == "ab3":
                    history = [f(x)] + history  # tendency at the pre-step state
                tab = BUTCHER_TABLEAUS[
                    "rk4" if spec.scheme == "ab3" else spec.scheme
                ]
                x, _ = rk_step(f, x, spec.dt, tab)
            if post_step is not None:
                x = post_step(x)
            if check_finite and not _is_finite_state(x):
                raise DivergenceError(
                    f"state became non-finite at step {i + 1}", step=i + 1
                )
            states.append(x)

    if traced:
        return states
    return np.stack([np.asarray(s) for s in states])
