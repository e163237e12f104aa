"""Evaluation statistics: RMSE series, paired Student's t-test, wall timing.

The t CDF is evaluated through a continued-fraction regularized incomplete
beta function (Lentz's algorithm), so the package needs no stats dependency;
the tests cross-check it against an independent reference implementation.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

__all__ = ["TrialResult", "rmse", "paired_t_test", "TTestResult",
           "time_block", "normal_ci_halfwidth", "student_t_sf"]


@dataclass
class TrialResult:
    """Per-trial record emitted by the experiment harness."""

    method: str
    rmse_series: np.ndarray
    aggregate_rmse: float
    wall_time_s: float
    diverged_windows: int = 0


def rmse(a, b, step_range=None):
    """Per-step spatial RMSE between two trajectories plus the aggregate.

    ``step_range=(lo, hi)`` restricts to steps [lo, hi).  The aggregate is the
    root of the mean squared per-step error over the range, which for equal
    spatial dimension equals the RMSE over all (step, component) pairs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 1:
        a = a[:, None]
        b = b[:, None]
    if step_range is not None:
        lo, hi = step_range
        a = a[lo:hi]
        b = b[lo:hi]
    sq = np.mean((a - b) ** 2, axis=1)
    series = np.sqrt(sq)
    aggregate = float(np.sqrt(np.mean(sq)))
    return series, aggregate


def _beta_cf(a, b, x, max_iter=300, eps=3e-14):
    """Continued fraction for the incomplete beta (Lentz's method)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < 1e-300:
        d = 1e-300
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < 1e-300:
            d = 1e-300
        c = 1.0 + aa / c
        if abs(c) < 1e-300:
            c = 1e-300
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < 1e-300:
            d = 1e-300
        c = 1.0 + aa / c
        if abs(c) < 1e-300:
            c = 1e-300
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    return h


def _betainc_reg(a, b, x):
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _beta_cf(a, b, x) / a
    return 1.0 - bt * _beta_cf(b, a, 1.0 - x) / b


def student_t_sf(t, dof):
    """Two-sided tail probability P(|T| >= |t|) for Student's t."""
    t = abs(float(t))
    if not np.isfinite(t):
        return 0.0
    x = dof / (dof + t * t)
    return _betainc_reg(dof / 2.0, 0.5, x)


@dataclass
class TTestResult:
    t: float
    p: float
    significant: bool
    degenerate: bool = False


def paired_t_test(x, y, alpha=0.01):
    """Two-sided paired Student's t-test on the differences x - y."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractError("x and y must be 1-D with equal length")
    n = x.size
    if n < 2:
        raise ContractError("need at least 2 pairs")
    d = x - y
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0, significant=False)
        return TTestResult(t=math.copysign(math.inf, mean), p=0.0,
                           significant=True, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    p = student_t_sf(t, n - 1)
    return TTestResult(t=float(t), p=float(p), significant=bool(p < alpha))


def time_block(label, closure):
    """Run ``closure()`` under a monotonic clock; returns (result, seconds)."""
    t0 = time.perf_counter()
    result = closure()
    return result, time.perf_counter() - t0


def normal_ci_halfwidth(sample, level=0.95):
    """Normal-approximation confidence half-width for the sample mean."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.size < 2:
        return 0.0
    z = {0.9: 1.6449, 0.95: 1.9600, 0.99: 2.5758}[level]
    return float(z * sample.std(ddof=1) / math.sqrt(sample.size))
