"""Tests for drift assembly and the expanded Stein operator."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steinbench.core import ConfigError, DiffusionSpec, check_diffusion
from steinbench.operators import (
    OperatorData,
    apply_operator,
    diffusion_from_config,
    drift_constant,
    drift_general,
    fd_divergence,
    langevin,
    mean_zero_check,
    nonreversible,
    preconditioned,
    second_order,
)
from steinbench.targets import gaussian, riemannian_spec_pseudo_huber, symmetric_mixture, with_velocity

N01 = gaussian([0.0], 1.0)


class TestDrift:
    def test_langevin_standard_normal(self):
        op = drift_constant(np.eye(1), N01, [[0.0], [2.0], [1.0]])
        np.testing.assert_array_equal(op.b_vals[:, 0], [0.0, -1.0, -0.5])
        np.testing.assert_array_equal(op.m_vals[:, 0, 0], [1.0, 1.0, 1.0])

    def test_preconditioned_gaussian(self):
        mu = np.array([1.0, -2.0])
        S = np.array([[2.0, 0.5], [0.5, 1.0]])
        X = np.random.default_rng(0).normal(size=(7, 2))
        op = drift_constant(S, gaussian(mu, S), X)
        np.testing.assert_allclose(op.b_vals, -0.5 * (X - mu), atol=1e-12)

    def test_langevin_is_half_score_exactly(self):
        P = symmetric_mixture(4.0)
        X = np.linspace(-5, 5, 11)[:, None]
        op = drift_general(langevin(1), P, X)
        assert np.array_equal(op.b_vals, 0.5 * P.score(X))

    def test_constant_general_bitwise(self):
        P = gaussian([0.0, 1.0], [[1.0, 0.3], [0.3, 2.0]])
        spec = nonreversible([[2.0, 0.0], [0.0, 1.0]], [[0.0, 1.5], [-1.5, 0.0]])
        X = np.random.default_rng(1).normal(size=(9, 2))
        a = drift_general(spec, P, X)
        b = drift_constant(spec.m_const, P, X)
        assert np.array_equal(a.b_vals, b.b_vals) and np.array_equal(a.m_vals, b.m_vals)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            drift_constant(np.eye(2), N01, [[0.0]])

    def test_missing_divergence(self):
        base = riemannian_spec_pseudo_huber(1.0, 1)
        spec = DiffusionSpec(1, base.a_fn, base.c_fn, None, name="nodiv")
        with pytest.raises(ConfigError, match="divergence"):
            drift_general(spec, N01, [[0.0]])
        # explicit opt-in to finite differences
        op = drift_general(spec, N01, [[1.0]], fd_fallback=True)
        ref = drift_general(base, N01, [[1.0]])
        np.testing.assert_allclose(op.b_vals, ref.b_vals, rtol=1e-8)

    def test_operator_data_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            OperatorData(np.array([[np.inf]]), np.ones((1, 1, 1)))


class TestRiemannian:
    def test_origin(self):
        spec = riemannian_spec_pseudo_huber(1.0, 2)
        np.testing.assert_array_equal(spec.a(np.zeros((1, 2)))[0], np.eye(2))
        np.testing.assert_array_equal(spec.div_m_fn(np.zeros((1, 2)))[0], [0.0, 0.0])

    def test_unit_delta_unit_vector(self):
        spec = riemannian_spec_pseudo_huber(1.0, 2)
        np.testing.assert_allclose(spec.div_m_fn(np.array([[1.0, 0.0]]))[0], [1 / np.sqrt(2), 0.0], rtol=1e-14)

    def test_three_four(self):
        # hand formula beta / (delta^2 sqrt(1 + |beta|^2 / delta^2)) at |beta| = 5
        spec = riemannian_spec_pseudo_huber(1.0, 2)
        beta = np.array([[3.0, 4.0]])
        expected = beta[0] / np.sqrt(26.0)
        np.testing.assert_allclose(spec.div_m_fn(beta)[0], expected, rtol=1e-14)
        np.testing.assert_allclose(fd_divergence(spec.m, beta)[0], expected, rtol=1e-8)

    def test_divergence_matches_fd(self):
        rng = np.random.default_rng(2)
        for delta, scale in [(0.5, 1.0), (2.0, 2.0), (1.0, 1.0)]:
            spec = riemannian_spec_pseudo_huber(delta, 3, scale)
            X = rng.normal(scale=3, size=(20, 3))
            fd = fd_divergence(spec.m, X)
            an = spec.div_m_fn(X)
            assert np.max(np.abs(fd - an)) <= 1e-5 * max(1.0, np.max(np.abs(an)))
            check_diffusion(spec, X)

    def test_bad_delta(self):
        with pytest.raises(ConfigError):
            riemannian_spec_pseudo_huber(0.0)


class TestApply:
    def test_zero(self):
        op = drift_constant(np.eye(1), N01, [[0.3], [1.0]])
        np.testing.assert_array_equal(apply_operator(op, np.zeros((2, 1)), np.zeros((2, 1, 1))), [0.0, 0.0])

    def test_constant_g(self):
        X = np.array([[-1.0], [0.5], [2.0]])
        op = drift_constant(np.eye(1), N01, X)
        np.testing.assert_allclose(apply_operator(op, np.ones((3, 1)), np.zeros((3, 1, 1))), -X[:, 0])

    def test_identity_g(self):
        X = np.array([[-1.0], [0.5], [2.0]])
        op = drift_constant(np.eye(1), N01, X)
        np.testing.assert_allclose(apply_operator(op, X, np.ones((3, 1, 1))), 1 - X[:, 0] ** 2)
        Z = np.random.default_rng(0).normal(size=(200000, 1))
        h = apply_operator(drift_constant(np.eye(1), N01, Z), Z, np.ones((200000, 1, 1)))
        assert abs(h.mean()) <= 4 * h.std() / np.sqrt(h.size)

    def test_shape_mismatch(self):
        op = drift_constant(np.eye(1), N01, [[0.0]])
        with pytest.raises(ValueError):
            apply_operator(op, np.zeros((2, 1)), np.zeros((2, 1, 1)))

    @given(st.integers(1, 6), st.integers(1, 3), st.floats(-10, 10), st.integers(0, 10**6))
    @settings(max_examples=50, deadline=None)
    def test_linearity(self, n, d, alpha, seed):
        rng = np.random.default_rng(seed)
        op = OperatorData(rng.normal(size=(n, d)), rng.normal(size=(n, d, d)))
        g1, g2 = rng.normal(size=(2, n, d))
        G1, G2 = rng.normal(size=(2, n, d, d))
        lhs = apply_operator(op, alpha * g1 + g2, alpha * G1 + G2)
        rhs = alpha * apply_operator(op, g1, G1) + apply_operator(op, g2, G2)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * (1 + abs(alpha)) * 50)


def _tanh(Z):
    return np.tanh(Z)


def _tanh_grad(Z):
    n, d = Z.shape
    G = np.zeros((n, d, d))
    idx = np.arange(d)
    G[:, idx, idx] = 1 - np.tanh(Z) ** 2
    return G


class TestMeanZero:
    def test_normal_tanh(self):
        assert mean_zero_check(N01, langevin(1), _tanh, _tanh_grad, 100_000, seed=0).passed

    def test_mixture_sin(self):
        r = mean_zero_check(symmetric_mixture(4.0), langevin(1), np.sin, lambda Z: np.cos(Z)[:, :, None], 100_000, 1)
        assert r.passed

    def test_zero_function(self):
        r = mean_zero_check(N01, langevin(1), np.zeros_like, lambda Z: np.zeros(Z.shape + (1,)), 1000, 0)
        assert r.estimate == 0.0 and r.stderr == 0.0 and r.passed

    def test_second_order(self):
        P = with_velocity(gaussian([0.5], 2.0))
        r = mean_zero_check(P, second_order(1), _tanh, _tanh_grad, 100_000, seed=3)
        assert r.passed

    def test_no_sampler(self):
        from steinbench.core import TargetModel

        with pytest.raises(ValueError):
            mean_zero_check(TargetModel(1, lambda X: -X), langevin(1), _tanh, _tanh_grad, 10)


class TestPrebuilt:
    def test_second_order_blocks(self):
        spec = second_order(2)
        check_diffusion(spec, np.ones((1, 4)))
        m = spec.m_const
        np.testing.assert_array_equal(m[:2, :2], np.zeros((2, 2)))
        np.testing.assert_array_equal(m[:2, 2:], -2 * np.eye(2))
        np.testing.assert_array_equal(m[2:, :2], 2 * np.eye(2))
        np.testing.assert_array_equal(m[2:, 2:], 2 * np.eye(2))

    def test_config(self):
        assert diffusion_from_config({"kind": "langevin"}, 3).dim == 3
        s = diffusion_from_config({"kind": "preconditioned", "a": 2.0}, 2)
        np.testing.assert_array_equal(s.m_const, 2 * np.eye(2))
        s = diffusion_from_config({"kind": "nonreversible", "a": [[1, 0], [0, 1]], "c": [[0, 1], [-1, 0]]}, 2)
        assert s.m_const[0, 1] == 1
        assert diffusion_from_config({"kind": "second_order"}, 2).dim == 4
        s = diffusion_from_config({"kind": "riemannian_pseudo_huber", "delta": 1.0}, 2)
        assert not s.constant
        with pytest.raises(ConfigError):
            diffusion_from_config({"kind": "bogus"}, 1)
        with pytest.raises(ConfigError):
            diffusion_from_config({"kind": "preconditioned", "a": np.eye(3).tolist()}, 2)
        with pytest.raises(ConfigError):
            diffusion_from_config({"kind": "riemannian_pseudo_huber"}, 1)

    def test_preconditioned_matrix(self):
        assert preconditioned([[2.0]]).m_const[0, 0] == 2.0
