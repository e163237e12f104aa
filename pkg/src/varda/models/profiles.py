"""Named model parameter profiles, loadable from JSON config dicts.

The ``pyqg-default`` profile reproduces the upstream PyQG two-layer defaults.
Those defaults put the deformation-scale instability band near mode 10.6 of a
1e6 m box, above the Nyquist mode of a 16x16 grid, so the coarsest
configuration required here (512D = 2x16x16) would be laminar.  The
``two-layer-default`` profile used by the experiments moves the band down to
mode ~4 and is marked field by field where it deviates.
"""

from __future__ import annotations

from ..errors import ContractError
from .lorenz96 import L96Model, Lorenz96Params
from .qg import QGModel, QGParams

LORENZ96_PROFILES = {
    "lorenz96-default": {
        "forcing": 8.0,
        "dt": 0.01,
        "scheme": "dopri5",
    },
}

QG_PROFILES = {
    # Upstream PyQG two-layer defaults, kept for reference runs.
    "pyqg-default": {
        "L": 1.0e6,
        "beta": 1.5e-11,
        "rd": 15000.0,
        "delta": 0.25,
        "rek": 5.787e-7,
        "U1": 0.025,
        "U2": 0.0,
        "dt": 7200.0,
    },
    # Experiment profile.  Deviations from pyqg-default:
    #   rd   15000 -> 25000  (deformation mode ~10.6 -> ~6.4; unstable band at
    #                         modes 3-5, inside the 2/3-dealiased 16x16 grid)
    #   beta 1.5e-11 -> 1.5e-12 (keeps U1-U2 well supercritical at larger rd)
    #   U1   0.025 -> 0.05   (growth e-folds in ~500 steps so the 21,900-step
    #                         spin-up equilibrates; eddy CFL stays < 0.3 at 64x64)
    "two-layer-default": {
        "L": 1.0e6,
        "beta": 1.5e-12,
        "rd": 25000.0,
        "delta": 0.25,
        "rek": 5.787e-7,
        "U1": 0.05,
        "U2": 0.0,
        "dt": 7200.0,
    },
}


def lorenz96_model(dim, profile="lorenz96-default", linearization="dense",
                   **overrides):
    cfg = dict(LORENZ96_PROFILES[profile])
    cfg.update(overrides)
    params = Lorenz96Params(dim=dim, forcing=cfg["forcing"])
    return L96Model(params, scheme=cfg["scheme"], dt=cfg["dt"],
                    linearization=linearization)


def qg_model(nx, ny=None, profile="two-layer-default", **overrides):
    ny = nx if ny is None else ny
    cfg = dict(QG_PROFILES[profile])
    cfg.update(overrides)
    dt = cfg.pop("dt")
    params = QGParams.create(nx=nx, ny=ny, **cfg)
    return QGModel(params, dt=dt)


def qg_model_for_dim(dim, profile="two-layer-default", **overrides):
    """Grid from the flat state dimension (dim = 2 * n * n)."""
    n = round((dim / 2) ** 0.5)
    if 2 * n * n != dim:
        raise ContractError(f"dim {dim} is not 2*n*n for integer n")
    return qg_model(n, profile=profile, **overrides)
