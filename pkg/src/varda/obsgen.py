"""Observation networks, schedules, noise injection, IC perturbation.

All randomness flows through ``numpy.random.default_rng`` seeded with explicit
integer tuples, so a (seed, window) pair always reproduces the same batch no
matter which method consumes it; that is what makes paired method comparisons
valid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assim.problem import GaussianDiagSpec, ObservationBatch
from .errors import ContractError

__all__ = ["ObsNetwork", "draw_network", "observation_times", "sample_obs",
           "perturb_ic"]

_NOISE_TAG = 7177
_IC_TAG = 9931


@dataclass(frozen=True)
class ObsNetwork:
    """Fixed random observation locations plus schedule and noise level.

    ``noise_sd`` is a scalar or a per-component vector over the *full* state;
    observed components pick up their own entries.
    """

    indices: np.ndarray
    every_k: int
    noise_sd: object
    seed: int
    dim: int = field(default=0)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp)
        object.__setattr__(self, "indices", idx)
        if idx.size == 0 or np.any(np.diff(idx) <= 0):
            raise ContractError("indices must be non-empty, strictly increasing")
        if self.dim and (idx[0] < 0 or idx[-1] >= self.dim):
            raise ContractError("indices out of range for state dimension")
        if self.every_k < 1:
            raise ContractError("every_k must be >= 1")
        if np.any(np.asarray(self.noise_sd) < 0):
            raise ContractError("noise_sd must be >= 0")

    def noise_sd_at_obs(self):
        sd = np.asarray(self.noise_sd, dtype=np.float64)
        if sd.ndim == 0:
            return np.full(self.indices.size, float(sd))
        return sd[self.indices]


def draw_network(dim, n_obs, seed, every_k=1, noise_sd=0.0):
    """Uniform sample of ``n_obs`` distinct locations, fixed for a whole run."""
    if not 1 <= n_obs <= dim:
        raise ContractError(f"need 1 <= n_obs <= dim, got n_obs={n_obs}, dim={dim}")
    rng = np.random.default_rng([seed, 5501])
    idx = np.sort(rng.choice(dim, size=n_obs, replace=False))
    return ObsNetwork(indices=idx, every_k=every_k, noise_sd=noise_sd,
                      seed=seed, dim=dim)


def observation_times(window_steps, every_k, include_t0=False):
    """Steps inside one analysis window that carry observations.

    Default convention: first observation at step ``every_k``, then every
    ``every_k`` up to and including the window end.  With ``include_t0`` the
    schedule is {0, k, 2k, ...} strictly inside the window, so the window-end
    step belongs to the next window's t0 and nothing is counted twice.
    """
    if include_t0:
        return tuple(range(0, window_steps, every_k))
    return tuple(range(every_k, window_steps + 1, every_k))


def sample_obs(nature, net: ObsNetwork, window, include_t0=False):
    """Observe the nature run over one window.

    ``window`` is ``(start_step, window_steps)`` into ``nature``.  Values are
    truth plus N(0, noise_sd^2), reproducible per (net.seed, start_step).  The
    batch's noise_spec carries the true noise variances; assimilation configs
    typically swap in their assumed R.
    """
    start, steps = window
    times = observation_times(steps, net.every_k, include_t0)
    if start + steps >= len(nature) + 1:
        raise ContractError("window extends past the nature run")
    rng = np.random.default_rng([net.seed, _NOISE_TAG, int(start)])
    sd = net.noise_sd_at_obs()
    values = np.empty((len(times), net.indices.size))
    for i, t in enumerate(times):
        noise = rng.normal(0.0, 1.0, net.indices.size) * sd
        values[i] = nature[start + t][net.indices] + noise
    variance = np.maximum(sd**2, 1e-300)  # keep the diag spec positive at sd=0
    return ObservationBatch(
        times=times,
        indices=net.indices,
        values=values,
        noise_spec=GaussianDiagSpec(variance),
    )


def perturb_ic(truth_state, sd, seed):
    """truth + iid N(0, sd^2); deterministic per seed."""
    if np.any(np.asarray(sd) < 0):
        raise ContractError("sd must be >= 0")
    truth_state = np.asarray(truth_state, dtype=np.float64)
    rng = np.random.default_rng([seed, _IC_TAG])
    return truth_state + rng.normal(0.0, 1.0, truth_state.shape) * sd
