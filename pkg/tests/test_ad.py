"""Autodiff engine: gradients, VJP/JVP duality, Jacobians, Hessians, tape
semantics, and the linear-primitive adjoint contract."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varda import ad
from varda.errors import ContractError, NonFiniteError, ResourceLimitError
from varda.models import profiles
from varda.assim import GaussianDiagSpec, WindowProblem, cost
from varda.obsgen import draw_network, sample_obs

from helpers import central_diff_grad, fd_hessian, fd_jacobian, real_inner

RNG = np.random.default_rng(1234)


def quadratic(x):
    return ad.vsum(x * x)


class TestGrad:
    def test_sum_of_squares(self):
        g = ad.grad(quadratic, np.array([1.0, 2.0, 3.0]))
        assert np.allclose(g, [2.0, 4.0, 6.0])

    def test_constant_function(self):
        g = ad.grad(lambda x: 7.5, np.array([1.0, -2.0]))
        assert np.array_equal(g, np.zeros(2))

    def test_constant_var_independent(self):
        # f touches x only through a zero multiplier: grad exists and is 0
        g = ad.grad(lambda x: ad.vsum(0.0 * x) + 3.0, np.ones(4))
        assert np.allclose(g, 0.0)

    def test_nonscalar_output_rejected(self):
        with pytest.raises(ContractError):
            ad.grad(lambda x: x * x, np.ones(3))

    def test_grad_equals_vjp_with_unit_seed(self):
        x = RNG.standard_normal(5)
        f = lambda v: ad.vsum(ad.tanh(v) * v)
        g = ad.grad(f, x)
        g2 = ad.vjp(f, x, np.asarray(1.0))
        assert np.array_equal(g, g2)

    def test_l96_cost_gradient_matches_finite_differences(self):
        model = profiles.lorenz96_model(6)
        nature = model.rollout(RNG.standard_normal(6) + 2.0, 60)
        net = draw_network(6, 3, seed=5, every_k=5, noise_sd=0.5)
        batch = sample_obs(nature, net, (40, 10)).with_noise(
            GaussianDiagSpec.from_sd(0.625, 3)
        )
        prob = WindowProblem(
            background=nature[40] + 0.1 * RNG.standard_normal(6),
            B=GaussianDiagSpec.from_sd(0.33, 6),
            obs=batch, model=model, window_steps=10,
        )
        x0 = prob.background + 0.05 * RNG.standard_normal(6)
        g = ad.grad(lambda xv: cost(xv, prob), x0)
        fd = central_diff_grad(lambda v: float(cost(v, prob)), x0, eps=1e-5)
        assert np.abs(g - fd).max() / np.abs(fd).max() < 1e-6

    def test_non_finite_intermediate_identifies_node(self):
        def f(x):
            return ad.vsum(ad.log(x))

        with pytest.raises(NonFiniteError, match="log"):
            ad.grad(f, np.array([1.0, -1.0]))


class TestVjpJvp:
    def test_linear_map_adjoint(self):
        a = RNG.standard_normal((4, 6))
        f = lambda x: ad.matmul(a, x)
        v = RNG.standard_normal(4)
        assert np.allclose(ad.vjp(f, RNG.standard_normal(6), v), a.T @ v)

    def test_identity_vjp(self):
        v = RNG.standard_normal(5)
        out = ad.vjp(lambda x: x + 0.0, RNG.standard_normal(5), v)
        assert np.allclose(out, v)

    def test_vjp_shape_mismatch(self):
        with pytest.raises(ContractError):
            ad.vjp(lambda x: x, np.ones(3), np.ones(4))

    def test_jvp_linear_map(self):
        a = RNG.standard_normal((4, 6))
        v = RNG.standard_normal(6)
        out = ad.jvp(lambda x: ad.matmul(a, x), RNG.standard_normal(6), v)
        assert np.allclose(out, a @ v)

    def test_jvp_elementwise_square(self):
        out = ad.jvp(lambda x: x * x, np.array([2.0, 3.0]), np.array([1.0, 1.0]))
        assert np.allclose(out, [4.0, 6.0])

    def test_jvp_shape_mismatch(self):
        with pytest.raises(ContractError):
            ad.jvp(lambda x: x, np.ones(3), np.ones(2))

    def test_rk_step_vjp_matches_dense_fd_jacobian(self):
        from varda.integrate import IntegratorSpec, step
        from varda.models.lorenz96 import Lorenz96Params, l96_tendency

        p = Lorenz96Params(6)
        spec = IntegratorSpec("rk4", 0.05)
        f = lambda x: step(lambda u: l96_tendency(u, p), x, spec)
        x = RNG.standard_normal(6) + 2.0
        jac = fd_jacobian(lambda v: np.asarray(f(v)), x, eps=1e-6)
        v = RNG.standard_normal(6)
        assert np.abs(ad.vjp(f, x, v) - jac.T @ v).max() < 1e-6

    def test_duality_on_nonlinear_chain(self):
        def f(x):
            return ad.tanh(ad.roll(x, 1) * x) - 0.3 * x

        x = RNG.standard_normal(8)
        for _ in range(5):
            u = RNG.standard_normal(8)
            w = RNG.standard_normal(8)
            lhs = np.dot(ad.jvp(f, x, u), w)
            rhs = np.dot(u, ad.vjp(f, x, w))
            assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs))


class TestJacobianHessian:
    def test_jacobian_of_affine_map(self):
        a = RNG.standard_normal((3, 5))
        b = RNG.standard_normal(3)
        jac = ad.jacobian(lambda x: ad.matmul(a, x) + b, RNG.standard_normal(5))
        assert np.allclose(jac, a)

    def test_hessian_of_quadratic_form(self):
        q = RNG.standard_normal((4, 4))
        q = q + q.T
        f = lambda x: 0.5 * ad.dot(x, ad.matmul(q, x))
        hess = ad.hessian(f, RNG.standard_normal(4))
        assert np.allclose(hess, q, atol=1e-12)

    def test_hessian_of_l96_cost_vs_finite_differences(self):
        model = profiles.lorenz96_model(6)
        nature = model.rollout(RNG.standard_normal(6) + 2.0, 30)
        net = draw_network(6, 4, seed=8, every_k=2, noise_sd=0.3)
        batch = sample_obs(nature, net, (10, 6)).with_noise(
            GaussianDiagSpec.from_sd(0.4, 4)
        )
        prob = WindowProblem(
            background=nature[10], B=GaussianDiagSpec.from_sd(0.5, 6),
            obs=batch, model=model, window_steps=6,
        )
        x0 = nature[10] + 0.02 * RNG.standard_normal(6)
        f = lambda xv: cost(xv, prob)
        hess = ad.hessian(f, x0)
        fd = fd_hessian(lambda v: float(cost(v, prob)), x0, eps=1e-4)
        assert np.abs(hess - fd).max() / np.abs(fd).max() < 1e-4

    def test_hessian_symmetry(self):
        f = lambda x: ad.vsum(ad.exp(0.3 * x) * ad.roll(x, 1))
        hess = ad.hessian(f, RNG.standard_normal(6))
        denom = np.abs(hess).max()
        assert np.abs(hess - hess.T).max() <= 1e-8 * denom

    def test_dimension_cap(self):
        with pytest.raises(ResourceLimitError):
            ad.jacobian(lambda x: x, np.zeros(10), max_dim=5)
        with pytest.raises(ResourceLimitError):
            ad.hessian(lambda x: ad.vsum(x * x), np.zeros(10), max_dim=5)

    def test_hessian_of_linear_function_is_zero(self):
        assert np.array_equal(
            ad.hessian(lambda x: ad.vsum(3.0 * x), np.ones(3)), np.zeros((3, 3))
        )


class TestTapeSemantics:
    def test_replay_is_bit_identical(self):
        def f(x):
            y = ad.tanh(x * 1.7) + ad.roll(x, 2)
            return ad.vsum(y * y)

        tape, xv, out = ad.trace(f, RNG.standard_normal(9))
        assert ad.replay_max_error(tape) == 0.0

    def test_vjp_linearity_in_seed(self):
        f = lambda x: ad.tanh(x) * ad.roll(x, 1)
        x = RNG.standard_normal(7)
        v = RNG.standard_normal(7)
        w = RNG.standard_normal(7)
        alpha = 0.731
        lhs = ad.vjp(f, x, alpha * v + w)
        rhs = alpha * ad.vjp(f, x, v) + ad.vjp(f, x, w)
        assert np.abs(lhs - rhs).max() < 1e-12

    def test_nested_tapes_are_independent(self):
        with ad.Tape() as outer:
            a = outer.input(np.array([1.0, 2.0]))
            with ad.Tape() as inner:
                b = inner.input(np.array([3.0, 4.0]))
                _ = b * b
            _ = a + 1.0
        assert len(inner) == 1
        assert len(outer) == 1


SHAPES = st.integers(min_value=2, max_value=12)


class TestAdjointProperty:
    @given(n=SHAPES, seed=st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_dot_product_test_composed_function(self, n, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(n)
        u = rng.standard_normal(n)
        w = rng.standard_normal(n)

        def f(v):
            return ad.tanh(v) * ad.roll(v, 1) - 0.5 * v * v

        lhs = np.dot(ad.jvp(f, x, u), w)
        rhs = np.dot(u, ad.vjp(f, x, w))
        assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs))

    def test_builtin_linear_pairs(self):
        # (forward, adjoint, input shape, output shape builder)
        n = 12
        idx = np.array([1, 4, 7])
        cases = [
            ("take/scatter",
             lambda x: ad.take(x, idx), lambda w: ad.scatter(w, idx, n),
             (n,), (3,)),
            ("roll", lambda x: ad.roll(x, 3), lambda w: ad.roll(w, -3),
             (n,), (n,)),
            ("reshape", lambda x: ad.reshape(x, (3, 4)),
             lambda w: ad.reshape(w, (12,)), (n,), (3, 4)),
        ]
        rng = np.random.default_rng(0)
        for name, fwd, adj, shape_in, shape_out in cases:
            for _ in range(20):
                x = rng.standard_normal(shape_in)
                v = rng.standard_normal(shape_out)
                lhs = real_inner(np.asarray(fwd(x)), v)
                rhs = real_inner(x, np.asarray(adj(v)))
                assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs)), name

    def test_fft_and_embedding_pairs(self):
        rng = np.random.default_rng(3)
        z = rng.standard_normal((2, 4, 4)) + 1j * rng.standard_normal((2, 4, 4))
        w = rng.standard_normal((2, 4, 4)) + 1j * rng.standard_normal((2, 4, 4))
        lhs = real_inner(np.asarray(ad.fft2(z)), w)
        rhs = real_inner(z, 16.0 * np.asarray(ad.ifft2(w)))
        assert abs(lhs - rhs) <= 1e-8 * (1 + abs(lhs))

        x = rng.standard_normal((3, 3))
        wc = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        lhs = real_inner(np.asarray(ad.to_complex(x)), wc)
        rhs = real_inner(x, np.asarray(ad.real(wc)))
        assert abs(lhs - rhs) <= 1e-12

    def test_registered_linear_primitive_roundtrip(self):
        import scipy.sparse as sp

        rng = np.random.default_rng(9)
        a = sp.random(15, 15, density=0.3, random_state=np.random.RandomState(4))
        op, op_adj = ad.linear_primitive(
            "test_sparse", lambda x: a @ x, lambda w: a.T @ w
        )
        assert any(name == "test_sparse" for name, *_ in ad.LINEAR_PRIMITIVES)
        for _ in range(200 // 10):
            x = rng.standard_normal(15)
            v = rng.standard_normal(15)
            lhs = np.dot(np.asarray(op(x)), v)
            rhs = np.dot(x, np.asarray(op_adj(v)))
            assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs))
        # gradient through the primitive matches the dense transpose
        g = ad.grad(lambda x: ad.vsum(op(x) * 2.0), np.ones(15))
        assert np.allclose(g, 2.0 * np.asarray(a.sum(axis=0)).ravel())


class TestAdjointCostRatio:
    def test_measure_and_report_only(self, capsys):
        # adjoint-vs-function cost is environment-dependent: measured, never
        # asserted.
        import time

        model = profiles.lorenz96_model(36)
        x = RNG.standard_normal(36) + 2.0
        f = lambda v: ad.vsum(model.rollout(v, 10)[-1] ** 2)
        t0 = time.perf_counter()
        for _ in range(5):
            float(f(x))
        t_fwd = time.perf_counter() - t0
        t0 = time.perf_counter()
        for _ in range(5):
            ad.grad(f, x)
        t_grad = time.perf_counter() - t0
        print(f"\nadjoint/function wall-time ratio: {t_grad / t_fwd:.2f}")
