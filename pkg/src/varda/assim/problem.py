"""Window-problem data types and the strong-constraint cost function.

J(x0) = 1/2 (x0 - xb)^T B^-1 (x0 - xb)
      + 1/2 sum_i (y_i - H(x_i))^T R^-1 (y_i - H(x_i)),   x_i = M_i(x0),

with B and R diagonal.  The cost is written against the dispatching autodiff
ops, so the identical code evaluates plainly and under a tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .. import ad
from ..errors import ContractError

__all__ = [
    "GaussianDiagSpec", "ObservationBatch", "WindowProblem", "LrSchedule",
    "AnalysisResult", "SelectionOperator", "MatrixObsOperator", "cost",
]


@dataclass(frozen=True)
class GaussianDiagSpec:
    """Diagonal Gaussian covariance held as a variance vector."""

    variance: np.ndarray

    def __post_init__(self):
        var = np.atleast_1d(np.asarray(self.variance, dtype=np.float64))
        object.__setattr__(self, "variance", var)
        if np.any(var <= 0) or not np.all(np.isfinite(var)):
            raise ContractError("variances must be positive and finite")

    @classmethod
    def from_sd(cls, sd, dim=None):
        sd = np.asarray(sd, dtype=np.float64)
        if sd.ndim == 0:
            if dim is None:
                raise ContractError("scalar sd needs an explicit dim")
            sd = np.full(dim, float(sd))
        return cls(sd**2)

    @property
    def inv_variance(self):
        return 1.0 / self.variance

    @property
    def sd(self):
        return np.sqrt(self.variance)

    @property
    def inv_sd(self):
        return 1.0 / np.sqrt(self.variance)


@dataclass(frozen=True)
class ObservationBatch:
    """Observations inside one analysis window.

    ``times`` are step indices within [0, window_steps]; ``indices`` the
    observed components (fixed across times); ``values`` an
    (n_times, n_obs) array; ``noise_spec`` the per-obs-component variances.
    """

    times: tuple
    indices: np.ndarray
    values: np.ndarray
    noise_spec: GaussianDiagSpec

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(int(t) for t in self.times))
        idx = np.asarray(self.indices, dtype=np.intp)
        object.__setattr__(self, "indices", idx)
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals.reshape(len(self.times), -1)
        object.__setattr__(self, "values", vals)
        if idx.size and np.any(np.diff(idx) <= 0):
            raise ContractError("indices must be strictly increasing, unique")
        if any(t < 0 for t in self.times):
            raise ContractError("times must be >= 0")
        if vals.shape != (len(self.times), idx.size):
            raise ContractError(
                f"values shape {vals.shape} != (n_times, n_obs) "
                f"({len(self.times)}, {idx.size})"
            )

    @property
    def n_obs(self):
        return self.indices.size

    def with_noise(self, spec: GaussianDiagSpec):
        """Same batch with a different assumed R (per-obs variances)."""
        return replace(self, noise_spec=spec)


class SelectionOperator:
    """H x = x[indices]; the default linear observation operator."""

    def __init__(self, indices, dim):
        self.indices = np.asarray(indices, dtype=np.intp)
        self.dim = int(dim)

    def __call__(self, state):
        return ad.take(state, self.indices)

    def forward(self, x):
        return np.asarray(x)[self.indices]

    def adjoint(self, w):
        out = np.zeros(self.dim)
        out[self.indices] = w
        return out

    def quadratic_diag(self, weights):
        """Diagonal of H^T diag(weights) H (exists because H is a selection)."""
        out = np.zeros(self.dim)
        out[self.indices] = weights
        return out


class MatrixObsOperator:
    """H x = (W x)[indices]: a fixed readout followed by selection.

    The selected rows are precomputed, so forward/adjoint are single GEMVs.
    """

    def __init__(self, matrix, indices):
        matrix = np.asarray(matrix, dtype=np.float64)
        self.indices = np.asarray(indices, dtype=np.intp)
        self.rows = matrix[self.indices].copy()
        self.rows_t = self.rows.T.copy()
        self.dim = matrix.shape[1]

    def __call__(self, state):
        return ad.matmul(self.rows, state)

    def forward(self, x):
        return self.rows @ np.asarray(x)

    def adjoint(self, w):
        return self.rows_t @ w

    def quadratic_diag(self, weights):
        return None  # dense H^T R^-1 H; callers fall back to a matrix-free solve

    def quadratic_apply(self, weights):
        return lambda v: self.rows_t @ (weights * (self.rows @ v))


@dataclass(frozen=True)
class LrSchedule:
    """Exponentially decaying learning rate alpha0 * decay**k."""

    alpha0: float
    decay: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha0 <= 1.0:
            raise ContractError("alpha0 must be in (0, 1]")
        if not 0.0 < self.decay <= 1.0:
            raise ContractError("decay must be in (0, 1]")


def lr_value(lr: LrSchedule, k: int) -> float:
    """Learning rate at iteration k (k >= 0)."""
    if k < 0:
        raise ContractError("k must be >= 0")
    return lr.alpha0 * lr.decay**k


@dataclass
class WindowProblem:
    """One strong-constraint analysis window."""

    background: np.ndarray
    B: GaussianDiagSpec
    obs: ObservationBatch
    model: object
    window_steps: int
    obs_operator: object = None

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64)
        if self.background.size != self.model.dim:
            raise ContractError(
                f"background length {self.background.size} != model dim {self.model.dim}"
            )
        if self.B.variance.size != self.model.dim:
            raise ContractError("B variance length != model dim")
        if any(t > self.window_steps for t in self.obs.times):
            raise ContractError("observation time outside the window")
        if self.obs_operator is None:
            self.obs_operator = SelectionOperator(self.obs.indices, self.model.dim)


@dataclass
class AnalysisResult:
    analysis: np.ndarray
    cost_history: list
    wall_time: float
    iterations: int


def cost(x0, prob: WindowProblem):
    """Evaluate J(x0) along the nonlinear rollout; traced when x0 is a Var."""
    if np.size(ad._val(x0)) != prob.model.dim:
        raise ContractError("x0 dimension does not match the model")
    traj = prob.model.rollout(x0, prob.window_steps)
    dx = x0 - prob.background
    j = 0.5 * ad.vsum(dx * dx * prob.B.inv_variance)
    r_inv = prob.obs.noise_spec.inv_variance
    for i, t in enumerate(prob.obs.times):
        innov = prob.obs.values[i] - prob.obs_operator(traj[t])
        j = j + 0.5 * ad.vsum(innov * innov * r_inv)
    return j
