"""Shared independent oracles: finite differences and dense assembly.

These deliberately avoid the autodiff machinery they are used to check.
"""

import numpy as np


def central_diff_grad(f, x, eps=1e-5):
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def fd_jacobian(f, x, eps=1e-6):
    x = np.asarray(x, dtype=np.float64)
    f0 = np.asarray(f(x))
    jac = np.zeros((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        jac[:, i] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * eps)
    return jac


def fd_hessian(f, x, eps=1e-4):
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    hess = np.zeros((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = eps
        for j in range(i, n):
            ej = np.zeros(n)
            ej[j] = eps
            val = (
                f(x + ei + ej) - f(x + ei - ej)
                - f(x - ei + ej) + f(x - ei - ej)
            ) / (4 * eps**2)
            hess[i, j] = val
            hess[j, i] = val
    return hess


def real_inner(a, b):
    """The real inner product used by the adjoint convention."""
    return float(np.real(np.vdot(a, b)))
