"""Linear toy forecast model: one step is multiplication by a fixed matrix.

Used for the quadratic-cost checks where incremental 4D-Var, the
exact-Hessian gradient method, and the Gauss-Newton residual step must agree
with the dense normal-equations solution.
"""

from __future__ import annotations

import numpy as np

from .. import ad


class _MatrixLinearization:
    def __init__(self, mat, n_steps):
        self.mat = mat
        self.mat_t = mat.T.copy()
        self.n_steps = n_steps
        self.dim = mat.shape[0]

    def tlm(self, v):
        out = np.empty((self.n_steps + 1, self.dim))
        out[0] = v
        for i in range(self.n_steps):
            v = self.mat @ v
            out[i + 1] = v
        return out

    def adjoint(self, seeds):
        if not isinstance(seeds, dict):
            seeds = {i: seeds[i] for i in range(len(seeds))}
        w = np.zeros(self.dim)
        for s in range(self.n_steps, 0, -1):
            ws = seeds.get(s)
            if ws is not None:
                w = w + np.asarray(ws, dtype=np.float64)
            w = self.mat_t @ w
        w0 = seeds.get(0)
        if w0 is not None:
            w = w + np.asarray(w0, dtype=np.float64)
        return w


class LinearModel:
    def __init__(self, mat):
        self.mat = np.asarray(mat, dtype=np.float64)
        if self.mat.ndim != 2 or self.mat.shape[0] != self.mat.shape[1]:
            raise ValueError("step matrix must be square")

    @property
    def dim(self):
        return self.mat.shape[0]

    def rollout(self, x0, n_steps, check_finite=True):
        states = [x0]
        x = x0
        for _ in range(n_steps):
            x = ad.matmul(self.mat, x)
            states.append(x)
        if type(x0) is ad.Var:
            return states
        return np.stack([np.asarray(s) for s in states])

    def rollout_traced(self, x0_var, n_steps):
        return self.rollout(x0_var, n_steps)

    def linearize(self, x0, n_steps):
        traj = self.rollout(np.asarray(x0, dtype=np.float64), n_steps)
        return _MatrixLinearization(self.mat, n_steps), traj
