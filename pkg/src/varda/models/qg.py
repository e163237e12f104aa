"""Two-layer quasi-geostrophic dynamics, pseudo-spectral on a doubly periodic box.

Prognostic variable: layer potential vorticity q_i, advanced in spectral space.
The layers couple through the PV inversion

    q1 = lap(psi1) + F1 (psi2 - psi1),   q2 = lap(psi2) + F2 (psi1 - psi2),

with F1 = kd^2/(1+delta), F2 = delta F1.  The evolution carries Jacobian
advection J(psi_i, q_i) (dealiased by the 2/3 rule), mean-gradient terms
beta_i d(psi_i)/dx with beta_1 = beta + F1 (U1-U2), beta_2 = beta - F2 (U1-U2),
mean advection U_i d(q_i)/dx, linear bottom drag on layer 2, and a
scale-selective exponential spectral filter applied after every time update.

Everything is written against the dispatching autodiff ops; all complex-valued
operations are R-linear (FFTs, fixed-coefficient multiplies), with the
nonlinear products formed on real fields, so gradients through the model are
exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import ad
from ..errors import ContractError
from ..integrate import IntegratorSpec, rollout

__all__ = ["QGParams", "QGGrid", "QGModel", "qg_pv_inversion", "qg_tendency",
           "single_mode_operator"]


@dataclass(frozen=True)
class QGParams:
    """Physical parameters.  ``kd2`` is the squared deformation wavenumber;
    ``F1``/``F2`` are the stretching coefficients derived from it."""

    nx: int
    ny: int
    L: float
    beta: float
    rek: float
    delta: float
    U1: float
    U2: float
    kd2: float
    F1: float
    F2: float
    filterfac: float = 23.6
    filter_cutoff: float = 0.65 * np.pi

    def __post_init__(self):
        if self.nx % 2 or self.ny % 2:
            raise ContractError("nx and ny must be even (FFT + dealias masks)")
        if abs(self.F2 - self.delta * self.F1) > 1e-12 * max(abs(self.F1), 1.0):
            raise ContractError("F2 must equal delta * F1")
        for name in ("beta", "rek", "delta", "U1", "U2", "kd2"):
            if not np.isfinite(getattr(self, name)):
                raise ContractError(f"{name} must be finite")

    @classmethod
    def create(cls, nx, ny, L, beta, rek, delta, U1, U2, rd=None, kd2=None,
               **kwargs):
        if kd2 is None:
            if rd is None:
                raise ContractError("give either rd or kd2")
            kd2 = 1.0 / rd**2
        F1 = kd2 / (1.0 + delta)
        return cls(nx=nx, ny=ny, L=L, beta=beta, rek=rek, delta=delta,
                   U1=U1, U2=U2, kd2=kd2, F1=F1, F2=delta * F1, **kwargs)

    @property
    def beta1(self):
        return self.beta + self.F1 * (self.U1 - self.U2)

    @property
    def beta2(self):
        return self.beta - self.F2 * (self.U1 - self.U2)


class QGGrid:
    """Precomputed constant spectral arrays for a parameter set."""

    def __init__(self, p: QGParams):
        self.p = p
        nx, ny, L = p.nx, p.ny, p.L
        k1d = 2.0 * np.pi / L * np.fft.fftfreq(nx, d=1.0 / nx)
        l1d = 2.0 * np.pi / L * np.fft.fftfreq(ny, d=1.0 / ny)
        k2d, l2d = np.meshgrid(k1d, l1d)  # (ny, nx); k varies along x
        self.ik = (1j * k2d)[None, :, :]
        self.il = (1j * l2d)[None, :, :]
        self.wv2 = (k2d**2 + l2d**2)[None, :, :]

        # PV inversion: per-wavenumber 2x2 solve, singular mean mode zeroed.
        det = self.wv2[0] ** 2 + self.wv2[0] * (p.F1 + p.F2)
        det[0, 0] = 1.0
        self.inv11 = (-self.wv2[0] - p.F2) / det
        self.inv12 = -p.F1 / det
        self.inv21 = -p.F2 / det
        self.inv22 = (-self.wv2[0] - p.F1) / det
        for arr in (self.inv11, self.inv12, self.inv21, self.inv22):
            arr[0, 0] = 0.0

        # Mean-gradient and mean-advection coefficients per layer.
        beta_l = np.array([p.beta1, p.beta2])[:, None, None]
        u_l = np.array([p.U1, p.U2])[:, None, None]
        self.c_beta = self.ik * beta_l
        self.c_u = self.ik * u_l
        layer2 = np.array([0.0, 1.0])[:, None, None]
        self.c_drag = p.rek * self.wv2 * layer2

        # 2/3-rule dealiasing mask (integer mode magnitudes).
        mk = np.abs(np.fft.fftfreq(nx, d=1.0 / nx))
        ml = np.abs(np.fft.fftfreq(ny, d=1.0 / ny))
        mk2, ml2 = np.meshgrid(mk, ml)
        self.dealias = ((mk2 <= nx // 3) & (ml2 <= ny // 3)).astype(float)[None]

        # PyQG-style exponential small-scale dissipation filter.
        dx = L / nx
        dy = L / ny
        wvx = np.sqrt((k2d * dx) ** 2 + (l2d * dy) ** 2)
        filtr = np.exp(-p.filterfac * (wvx - p.filter_cutoff) ** 4)
        filtr[wvx <= p.filter_cutoff] = 1.0
        self.filtr = filtr[None, :, :]


def _split_layers(qh):
    q1 = ad.take(qh, [0])
    q2 = ad.take(qh, [1])
    return q1, q2


def _stack_layers(a, b):
    return ad.scatter(a, [0], 2) + ad.scatter(b, [1], 2)


def qg_pv_inversion(qh, grid: QGGrid):
    """Streamfunction from PV: solve the coupled elliptic relation per mode."""
    q1, q2 = _split_layers(qh)
    p1 = grid.inv11 * q1 + grid.inv12 * q2
    p2 = grid.inv21 * q1 + grid.inv22 * q2
    return _stack_layers(p1, p2)


def qg_tendency(qh, grid: QGGrid):
    """Spectral PV tendency (both layers), dealiased, differentiable."""
    if np.shape(ad._val(qh)) != (2, grid.p.ny, grid.p.nx):
        raise ContractError(
            f"spectral state must have shape (2, {grid.p.ny}, {grid.p.nx})"
        )
    ph = qg_pv_inversion(qh, grid)

    qh_t = grid.dealias * qh
    ph_t = grid.dealias * ph
    u = ad.real(ad.ifft2(-1.0 * (grid.il * ph_t)))
    v = ad.real(ad.ifft2(grid.ik * ph_t))
    qx = ad.real(ad.ifft2(grid.ik * qh_t))
    qy = ad.real(ad.ifft2(grid.il * qh_t))
    adv = ad.fft2(ad.to_complex(u * qx + v * qy))
    adv = grid.dealias * adv

    dq = -1.0 * adv - grid.c_beta * ph - grid.c_u * qh + grid.c_drag * ph
    return dq


def single_mode_operator(p: QGParams, k, l):
    """Analytic 2x2 linear operator for one wavenumber about the rest state.

    d/dt [q1_hat, q2_hat] = L [q1_hat, q2_hat]; advection is exactly zero at
    rest, so this is the full linearization there (drag included).
    """
    wv2 = k**2 + l**2
    a = np.array([[-wv2 - p.F1, p.F1], [p.F2, -wv2 - p.F2]])
    inv = np.linalg.inv(a)
    lin = -1j * k * (np.diag([p.U1, p.U2]) + np.diag([p.beta1, p.beta2]) @ inv)
    lin[1, :] += p.rek * wv2 * inv[1, :]
    return lin


class QGModel:
    """Forecast-model handle.  The DA control vector is the real gridded PV of
    both layers, flattened to length 2*ny*nx; integration runs in spectral
    space (AB3 with rk4 startup, spectral filter after every update)."""

    def __init__(self, params: QGParams, dt=7200.0, scheme="ab3",
                 apply_filter=True):
        self.params = params
        self.grid = QGGrid(params)
        self.dt = dt
        self.scheme = scheme
        self.apply_filter = apply_filter
        self.field_shape = (2, params.ny, params.nx)

    @property
    def dim(self):
        return 2 * self.params.ny * self.params.nx

    def spec(self, n_steps):
        return IntegratorSpec(self.scheme, self.dt, n_steps)

    def to_spectral(self, x_flat):
        z = ad.to_complex(ad.reshape(x_flat, self.field_shape))
        return ad.fft2(z)

    def to_grid(self, qh):
        g = ad.real(ad.ifft2(qh))
        return ad.reshape(g, (self.dim,))

    def tendency(self, qh):
        return qg_tendency(qh, self.grid)

    def _post_step(self):
        if not self.apply_filter:
            return None
        return lambda qh: self.grid.filtr * qh

    def rollout(self, x0, n_steps, check_finite=True):
        """Trajectory of flat gridded states (plain array or traced)."""
        qh0 = self.to_spectral(x0)
        spectral = rollout(self.tendency, qh0, self.spec(n_steps),
                           post_step=self._post_step(),
                           check_finite=check_finite)
        states = [self.to_grid(qh) for qh in spectral]
        if type(x0) is ad.Var:
            return states
        return np.stack([np.asarray(s) for s in states])

    def rollout_traced(self, x0_var, n_steps):
        return self.rollout(x0_var, n_steps, check_finite=False)

    def rollout_spectral(self, qh0, n_steps, check_finite=True):
        """Spectral-space trajectory (used by the data generator)."""
        return rollout(self.tendency, qh0, self.spec(n_steps),
                       post_step=self._post_step(),
                       check_finite=check_finite)

    def linearize(self, x0, n_steps):
        lin, traj = ad.linearize(
            lambda xv: self.rollout_traced(xv, n_steps),
            np.asarray(x0, dtype=np.float64),
        )
        return lin, traj

    def random_grid_state(self, seed, amplitude=1e-7, band=4):
        """Band-limited noise IC: white noise low-passed to modes <= band."""
        rng = np.random.default_rng(seed)
        field = rng.standard_normal(self.field_shape)
        fh = np.fft.fft2(field, axes=(-2, -1))
        mk = np.abs(np.fft.fftfreq(self.params.nx, d=1.0 / self.params.nx))
        ml = np.abs(np.fft.fftfreq(self.params.ny, d=1.0 / self.params.ny))
        mk2, ml2 = np.meshgrid(mk, ml)
        keep = ((mk2 <= band) & (ml2 <= band)).astype(float)
        low = np.real(np.fft.ifft2(fh * keep[None], axes=(-2, -1)))
        low *= amplitude / max(np.abs(low).max(), 1e-300)
        return low.ravel()
