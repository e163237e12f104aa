"""RMSE, paired t-test (vs an independent reference CDF), timing."""

import time

import numpy as np
import pytest
from scipy import stats

from varda.errors import ContractError
from varda.metrics import (
    normal_ci_halfwidth,
    paired_t_test,
    rmse,
    student_t_sf,
    time_block,
)

RNG = np.random.default_rng(3)


class TestRmse:
    def test_identical_trajectories(self):
        a = RNG.standard_normal((20, 5))
        series, aggregate = rmse(a, a)
        assert np.array_equal(series, np.zeros(20))
        assert aggregate == 0.0

    def test_constant_offset(self):
        a = RNG.standard_normal((15, 4))
        series, aggregate = rmse(a, a + 2.5)
        assert np.allclose(series, 2.5)
        assert abs(aggregate - 2.5) < 1e-12

    def test_formula_oracle(self):
        a = RNG.standard_normal((30, 6))
        b = RNG.standard_normal((30, 6))
        series, aggregate = rmse(a, b)
        expected_series = np.array(
            [np.sqrt(np.mean((a[t] - b[t]) ** 2)) for t in range(30)]
        )
        assert np.abs(series - expected_series).max() < 1e-12
        assert abs(aggregate - np.sqrt(np.mean((a - b) ** 2))) < 1e-12

    def test_step_range(self):
        a = np.zeros((10, 3))
        b = np.zeros((10, 3))
        b[:5] = 1.0
        _, aggregate = rmse(a, b, step_range=(5, 10))
        assert aggregate == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            rmse(np.zeros((3, 2)), np.zeros((3, 3)))

    def test_permutation_invariance(self):
        a = RNG.standard_normal((12, 7))
        b = RNG.standard_normal((12, 7))
        perm = RNG.permutation(7)
        s1, g1 = rmse(a, b)
        s2, g2 = rmse(a[:, perm], b[:, perm])
        assert np.abs(s1 - s2).max() < 1e-12
        assert abs(g1 - g2) < 1e-12


class TestStudentT:
    def test_sf_matches_scipy_across_range(self):
        for dof in (1, 2, 5, 9, 30, 120):
            for t in (0.0, 0.31, 1.0, 2.262, 4.5, 9.0):
                ours = student_t_sf(t, dof)
                ref = 2 * stats.t.sf(t, dof)
                assert abs(ours - ref) < 1e-10, (t, dof)

    def test_textbook_paired_case(self):
        # classic before/after sample, n = 10
        x = np.array([125., 115., 130., 140., 140., 115., 140., 125., 140., 135.])
        y = np.array([110., 122., 125., 120., 140., 124., 123., 137., 135., 145.])
        res = paired_t_test(x, y, alpha=0.05)
        ref_t, ref_p = stats.ttest_rel(x, y)
        assert abs(res.t - ref_t) < 1e-6
        assert abs(res.p - ref_p) < 1e-6

    def test_random_samples_match_reference(self):
        for seed in range(25):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(3, 60))
            x = rng.standard_normal(n)
            y = x + 0.3 * rng.standard_normal(n) + 0.05
            res = paired_t_test(x, y, alpha=0.01)
            ref_t, ref_p = stats.ttest_rel(x, y)
            assert abs(res.t - ref_t) < 1e-8
            assert abs(res.p - ref_p) < 1e-8
            assert res.significant == (ref_p < 0.01)

    def test_exact_tie(self):
        x = np.array([1.0, 2.0, 3.0])
        res = paired_t_test(x, x.copy())
        assert res.p == 1.0
        assert not res.significant

    def test_zero_variance_nonzero_mean_degenerate(self):
        x = np.array([1.0, 2.0, 3.0])
        res = paired_t_test(x + 0.5, x)
        assert res.degenerate
        assert res.significant
        assert res.p == 0.0

    def test_antisymmetry(self):
        x = RNG.standard_normal(20)
        y = RNG.standard_normal(20)
        a = paired_t_test(x, y)
        b = paired_t_test(y, x)
        assert abs(a.t + b.t) < 1e-12
        assert abs(a.p - b.p) < 1e-12

    def test_length_contract(self):
        with pytest.raises(ContractError):
            paired_t_test(np.ones(3), np.ones(4))
        with pytest.raises(ContractError):
            paired_t_test(np.ones(1), np.ones(1))


class TestTiming:
    def test_noop_nonnegative(self):
        result, seconds = time_block("noop", lambda: 42)
        assert result == 42
        assert seconds >= 0.0

    def test_scales_with_work(self):
        def busy(n):
            total = 0.0
            for i in range(n):
                total += i * 0.5
            return total

        _, t_small = time_block("small", lambda: busy(20_000))
        _, t_big = time_block("big", lambda: busy(400_000))
        assert t_big > t_small

    def test_repeatability_cv(self):
        # identical work should time consistently (loose bound: CV < 50%)
        times = []
        for _ in range(10):
            _, s = time_block("rep", lambda: np.linalg.qr(
                np.random.default_rng(0).standard_normal((120, 120))))
            times.append(s)
        times = np.array(times)
        assert times.std() / times.mean() < 0.5


class TestCi:
    def test_halfwidth_formula(self):
        sample = RNG.standard_normal(50)
        hw = normal_ci_halfwidth(sample, level=0.95)
        expected = 1.96 * sample.std(ddof=1) / np.sqrt(50)
        assert abs(hw - expected) < 1e-9
