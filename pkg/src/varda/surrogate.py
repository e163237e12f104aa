"""Reservoir-computing surrogate forecast model.

State update (leaky echo-state network):

    r(t) = leak * tanh(A r(t-1) + sigma_u W_in u_n(t-1) + bias)
           + (1 - leak) * r(t-1),

where the adjacency A is sparse-random, rescaled once at build time so its
spectral radius hits the configured target (the gain is folded into A), and
u_n is the input standardized by the training climatology (mean/SD per
component).  The linear readout W_out maps reservoir states back to the
standardized system space and is the only trained matrix (ridge regression);
physical values are recovered affinely from it.

Assimilation in reservoir space reuses the generic window machinery: the
control variable is r(0), the forecast model is the closed-loop update with
u_n = W_out r, and the observation operator is the readout rows at the
observed components.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve as dense_solve

from . import ad
from .assim.problem import (
    GaussianDiagSpec,
    MatrixObsOperator,
    WindowProblem,
)
from .errors import ContractError, DivergenceError, LinearSolveError

__all__ = ["ReservoirSpec", "ReservoirModel", "build_reservoir", "advance",
           "train_readout", "synchronize", "forecast",
           "reservoir_window_problem", "ReservoirForecastModel"]


@dataclass(frozen=True)
class ReservoirSpec:
    """Macro-parameters.  ``input_sd`` is the SD the standardized inputs are
    scaled to before W_in; with sigma_u near 1 a small value keeps the tanh
    units in their responsive range, and the nonzero ``bias`` breaks the
    odd symmetry of tanh (without it, closed-loop forecasts of non-odd
    dynamics destabilize within a few steps)."""

    n_reservoir: int
    sparsity: float = 0.99
    spectral_radius: float = 0.6
    sigma_u: float = 0.9877
    leak: float = 1.0
    bias: float = 1.0
    input_sd: float = 0.03
    ridge_lambda: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.sparsity < 1.0:
            raise ContractError("sparsity must be in [0, 1)")
        if not self.spectral_radius > 0:
            raise ContractError("spectral_radius must be positive")
        if not 0.0 < self.leak <= 1.0:
            raise ContractError("leak must be in (0, 1]")
        if self.ridge_lambda < 0:
            raise ContractError("ridge_lambda must be >= 0")
        if not self.input_sd > 0:
            raise ContractError("input_sd must be positive")


def _spectral_radius(a_sparse, seed=0):
    n = a_sparse.shape[0]
    try:
        vals = spla.eigs(a_sparse, k=1, which="LM", maxiter=2000,
                         v0=np.random.default_rng([seed, 11]).standard_normal(n),
                         return_eigenvectors=False)
        return float(np.abs(vals[0]))
    except Exception:
        # power iteration fallback (magnitude only)
        rng = np.random.default_rng([seed, 13])
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(500):
            w = a_sparse @ v
            nw = np.linalg.norm(w)
            if nw == 0:
                return 0.0
            lam = nw
            v = w / nw
        return float(lam)


class ReservoirModel:
    """Adjacency + input matrix (fixed at build) and trained readout."""

    def __init__(self, a_sparse, w_in, spec, input_dim):
        self.A = a_sparse.tocsr()
        self.A_T = a_sparse.T.tocsr()
        self.W_in = w_in
        self.spec = spec
        self.input_dim = input_dim
        self.W_out = None
        self.state_sd = None
        self.input_mean = np.zeros(input_dim)
        self.input_scale = np.ones(input_dim)
        self._op_a, self._op_a_t = ad.linear_primitive(
            f"reservoir_adjacency_{id(self)}",
            lambda r: self.A @ r,
            lambda w: self.A_T @ w,
        )

    @property
    def n_reservoir(self):
        return self.spec.n_reservoir

    @property
    def trained(self):
        return self.W_out is not None

    def normalize(self, u):
        return (u - self.input_mean) / self.input_scale

    def denormalize(self, u_n):
        return self.input_mean + self.input_scale * u_n

    def readout_physical(self, r):
        """Physical-space state W_out r, de-standardized."""
        self._require_trained()
        return self.denormalize(self.W_out @ np.asarray(r))

    def _require_trained(self):
        if not self.trained:
            raise ContractError("readout is untrained; call train_readout first")


def build_reservoir(spec: ReservoirSpec, input_dim, max_rebuilds=5):
    """Random sparse adjacency and input matrix, deterministic per seed.

    A has uniform(-1, 1) entries at density 1 - sparsity and is rescaled so
    its spectral radius equals ``spec.spectral_radius``; a degenerate draw
    (zero radius) triggers a rebuild with the next seed, reported as a
    warning.
    """
    if input_dim < 1:
        raise ContractError("input_dim must be >= 1")
    n = spec.n_reservoir
    density = 1.0 - spec.sparsity
    nnz = int(round(density * n * n))
    if nnz == 0:
        raise ContractError(
            "sparsity leaves an empty adjacency (spectral radius 0); "
            "lower sparsity or enlarge the reservoir"
        )
    seed = spec.seed
    for attempt in range(max_rebuilds):
        rng = np.random.default_rng([seed, 17])
        flat = rng.choice(n * n, size=nnz, replace=False)
        rows, cols = np.divmod(flat, n)
        vals = rng.uniform(-1.0, 1.0, nnz)
        a = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        radius = _spectral_radius(a, seed=seed)
        if radius > 1e-12:
            a = a * (spec.spectral_radius / radius)
            w_in = rng.uniform(-1.0, 1.0, (n, input_dim))
            model = ReservoirModel(a, w_in, spec, input_dim)
            return model
        warnings.warn(
            f"degenerate adjacency draw (radius 0) for seed {seed}; rebuilding",
            stacklevel=2,
        )
        seed += 1
    raise ContractError("could not draw a non-degenerate adjacency matrix")


def _preactivation(model, r, u_norm):
    return (
        model._op_a(r)
        + model.spec.sigma_u * ad.matmul(model.W_in, u_norm)
        + model.spec.bias
    )


def advance(model: ReservoirModel, r, u):
    """One reservoir update driven by a physical-space input state."""
    u_norm = (u - model.input_mean) / model.input_scale
    pre = _preactivation(model, r, u_norm)
    leak = model.spec.leak
    return leak * ad.tanh(pre) + (1.0 - leak) * r


def _advance_norm(model, r, u_norm):
    pre = _preactivation(model, r, u_norm)
    leak = model.spec.leak
    return leak * ad.tanh(pre) + (1.0 - leak) * r


def train_readout(model: ReservoirModel, drive_inputs, targets, washout=100,
                  block=4096):
    """Ridge-regularized readout fit in teacher-forced mode.

    ``drive_inputs[t]`` drives the update producing the state paired with
    ``targets[t]`` (callers pass ``traj[:-1]`` and ``traj[1:]`` for one-step
    prediction).  Input standardization is set here from the drive segment.
    Normal equations are accumulated in blocks, so memory stays at
    O(n_reservoir^2).  Returns ``(W_out, training report dict)`` and stores
    W_out plus reservoir-state SDs on the model.
    """
    drive = np.asarray(drive_inputs, dtype=np.float64)
    targ = np.asarray(targets, dtype=np.float64)
    if drive.shape != targ.shape:
        raise ContractError("drive and target lengths must match")
    n_steps = drive.shape[0]
    if washout >= n_steps:
        raise ContractError("washout must be shorter than the drive")

    model.input_mean = drive.mean(axis=0)
    scale = drive.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    model.input_scale = scale / model.spec.input_sd

    n = model.n_reservoir
    drive_n = (drive - model.input_mean) / model.input_scale
    targ_n = (targ - model.input_mean) / model.input_scale

    gtg = np.zeros((n, n))
    gtu = np.zeros((n, targ.shape[1]))
    s_sum = np.zeros(n)
    s_sq = np.zeros(n)
    count = 0

    r = np.zeros(n)
    leak = model.spec.leak
    sigma_u = model.spec.sigma_u
    states = np.empty((block, n))
    fill = 0
    w_in_t = model.W_in.T.copy()

    def flush(upto, t_hi):
        nonlocal count
        g = states[:upto]
        gtg[:] += g.T @ g
        gtu[:] += g.T @ targ_n[t_hi - upto:t_hi]
        s_sum[:] += g.sum(axis=0)
        s_sq[:] += (g**2).sum(axis=0)
        count += upto

    t_seen = 0
    for t in range(n_steps):
        pre = model.A @ r + sigma_u * (drive_n[t] @ w_in_t) + model.spec.bias
        r = leak * np.tanh(pre) + (1.0 - leak) * r
        t_seen += 1
        if t < washout:
            continue
        states[fill] = r
        fill += 1
        if fill == block:
            flush(fill, t + 1)
            fill = 0
    if fill:
        flush(fill, n_steps)

    lam = model.spec.ridge_lambda
    lhs = gtg + lam * np.eye(n)
    try:
        w_out_t = dense_solve(lhs, gtu, assume_a="pos")
    except np.linalg.LinAlgError as err:
        raise LinearSolveError(
            "normal equations are rank deficient; use ridge_lambda > 0"
        ) from err
    model.W_out = w_out_t.T.copy()

    mu = s_sum / count
    model.state_sd = np.sqrt(np.maximum(s_sq / count - mu**2, 1e-300))

    # report one-step training error over a replayed pass tail
    resid_sq = 0.0
    n_eval = 0
    r = np.zeros(n)
    for t in range(n_steps):
        pre = model.A @ r + sigma_u * (drive_n[t] @ w_in_t) + model.spec.bias
        r = leak * np.tanh(pre) + (1.0 - leak) * r
        if t >= washout:
            err = model.W_out @ r - targ_n[t]
            resid_sq += float(err @ err)
            n_eval += 1
    report = {
        "train_rmse_normalized": float(
            np.sqrt(resid_sq / (n_eval * targ.shape[1]))
        ),
        "n_samples": count,
        "washout": washout,
        "ridge_lambda": lam,
    }
    return model.W_out, report


def synchronize(model: ReservoirModel, recent_truth):
    """Teacher-force the reservoir over recent truth; returns the final state."""
    recent_truth = np.asarray(recent_truth, dtype=np.float64)
    r = np.zeros(model.n_reservoir)
    for u in recent_truth:
        r = advance(model, r, u)
    return r


def forecast(model: ReservoirModel, r0, n_steps):
    """Autonomous closed-loop rollout; returns physical-space states
    (n_steps+1, input_dim) starting from the readout of r0."""
    model._require_trained()
    r = np.asarray(r0, dtype=np.float64)
    out = np.empty((n_steps + 1, model.input_dim))
    out[0] = model.readout_physical(r)
    for i in range(n_steps):
        u_n = model.W_out @ r
        r = _advance_norm(model, r, u_n)
        if not np.all(np.isfinite(r)):
            raise DivergenceError(
                f"reservoir forecast diverged at step {i + 1}", step=i + 1
            )
        out[i + 1] = model.readout_physical(r)
    return out


class ReservoirForecastModel:
    """Model handle whose state is the reservoir vector (closed-loop update)."""

    def __init__(self, model: ReservoirModel):
        model._require_trained()
        self.model = model

    @property
    def dim(self):
        return self.model.n_reservoir

    def _step(self, r):
        u_n = ad.matmul(self.model.W_out, r)
        return _advance_norm(self.model, r, u_n)

    def rollout(self, r0, n_steps, check_finite=True):
        states = [r0]
        r = r0
        for i in range(n_steps):
            r = self._step(r)
            if check_finite and not np.all(np.isfinite(ad._val(r))):
                raise DivergenceError(
                    f"reservoir rollout diverged at step {i + 1}", step=i + 1
                )
            states.append(r)
        if type(r0) is ad.Var:
            return states
        return np.stack([np.asarray(s) for s in states])

    def rollout_traced(self, r0_var, n_steps):
        return self.rollout(r0_var, n_steps, check_finite=False)

    def linearize(self, r0, n_steps):
        return ad.linearize(
            lambda rv: self.rollout_traced(rv, n_steps),
            np.asarray(r0, dtype=np.float64),
        )


def reservoir_window_problem(model: ReservoirModel, r_background, obs_batch,
                             window_steps=None, background_spec=None,
                             background_sd_factor=0.1):
    """Build a reservoir-space window problem from physical-space observations.

    Observed values and their noise variances are standardized with the
    model's input climatology, so the observation operator is the linear map
    S W_out (readout rows at the observed components).  B defaults to the
    diagonal of (0.1 * reservoir-state SD)^2, per-component SDs taken from
    the training pass.
    """
    model._require_trained()
    idx = obs_batch.indices
    mean = model.input_mean[idx]
    scale = model.input_scale[idx]
    values_n = (obs_batch.values - mean) / scale
    var_n = obs_batch.noise_spec.variance / scale**2
    batch_n = obs_batch.__class__(
        times=obs_batch.times,
        indices=idx,
        values=values_n,
        noise_spec=GaussianDiagSpec(var_n),
    )
    if background_spec is None:
        background_spec = GaussianDiagSpec.from_sd(
            background_sd_factor * model.state_sd
        )
    handle = ReservoirForecastModel(model)
    if window_steps is None:
        window_steps = max(obs_batch.times)
    return WindowProblem(
        background=np.asarray(r_background, dtype=np.float64),
        B=background_spec,
        obs=batch_n,
        model=handle,
        window_steps=window_steps,
        obs_operator=MatrixObsOperator(model.W_out, idx),
    )
