import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lookgp.kernels import (
    Hyperparams,
    KernelKind,
    kernel_eval,
    kernel_grads,
    kernel_matrix,
    scaled_distance,
)

KINDS = [KernelKind.RBF, KernelKind.MATERN52]


def hp_for(D, ls=1.0, scale=1.0, noise=0.1):
    return Hyperparams(np.full(D, math.log(ls)), math.log(scale), math.log(noise))


def matern52_scalar(d, sk):
    r = math.sqrt(5.0) * d
    return sk * sk * (1.0 + r + r * r / 3.0) * math.exp(-r)


class TestHyperparams:
    def test_round_trip_vector_and_dict(self):
        hp = Hyperparams(np.array([0.1, -0.3]), 0.2, -1.0, 0.5)
        np.testing.assert_array_equal(Hyperparams.from_vector(hp.to_vector()).to_vector(), hp.to_vector())
        back = Hyperparams.from_dict(hp.to_dict())
        np.testing.assert_array_equal(back.to_vector(), hp.to_vector())
        assert set(hp.to_dict()) == {"log_lengthscales", "log_kernel_scale", "log_obs_noise", "mean_const"}

    @pytest.mark.parametrize("bad", [np.inf, np.nan, 1e6])
    def test_rejects_non_finite_exponent(self, bad):
        with pytest.raises(ValueError):
            Hyperparams(np.array([bad]), 0.0, 0.0)


class TestScaledDistance:
    def test_identity(self):
        x = np.array([0.3, -1.2, 5.0])
        assert scaled_distance(x, x, hp_for(3, 0.7)) == 0.0

    def test_direct_substitution(self):
        assert scaled_distance(np.array([0.0]), np.array([4.0]), hp_for(1, 2.0)) == pytest.approx(2.0)

    def test_anisotropic_against_scalar_sum(self):
        hp = Hyperparams(np.log([1.0, 10.0]))
        expected = math.sqrt((3.0 / 1.0) ** 2 + (4.0 / 10.0) ** 2)
        assert scaled_distance(np.zeros(2), np.array([3.0, 4.0]), hp) == pytest.approx(expected, rel=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            scaled_distance(np.zeros(2), np.zeros(3), hp_for(2))


class TestKernelEval:
    def test_rbf_identity_and_substitution(self):
        hp = hp_for(1)
        assert kernel_eval(np.array([0.4]), np.array([0.4]), hp, "rbf") == 1.0
        assert kernel_eval(np.array([0.0]), np.array([math.sqrt(2.0)]), hp, "rbf") == pytest.approx(math.exp(-1.0))

    def test_matern_formula(self):
        hp = Hyperparams(np.zeros(1), math.log(0.7))
        assert kernel_eval(np.array([0.0]), np.array([1.3]), hp, "matern52") == pytest.approx(
            matern52_scalar(1.3, 0.7), rel=1e-13
        )

    @pytest.mark.parametrize("kind", KINDS)
    def test_diagonal_is_kernel_variance(self, kind):
        hp = Hyperparams(np.zeros(2), math.log(1.7))
        assert kernel_eval(np.ones(2), np.ones(2), hp, kind) == pytest.approx(1.7**2)

    @pytest.mark.parametrize("kind", KINDS)
    @settings(max_examples=40, deadline=None)
    @given(d1=st.floats(0, 6), d2=st.floats(0, 6))
    def test_monotone_decay(self, kind, d1, d2):
        hp = hp_for(1)
        a, b = sorted([d1, d2])
        ka = kernel_eval(np.zeros(1), np.array([a]), hp, kind)
        kb = kernel_eval(np.zeros(1), np.array([b]), hp, kind)
        assert kb <= ka + 1e-15

    @pytest.mark.parametrize("kind", KINDS)
    @settings(max_examples=40, deadline=None)
    @given(
        x=arrays(float, 3, elements=st.floats(-3, 3)),
        z=arrays(float, 3, elements=st.floats(-3, 3)),
        ll=arrays(float, 3, elements=st.floats(-1, 1)),
    )
    def test_symmetry(self, kind, x, z, ll):
        hp = Hyperparams(ll)
        assert kernel_eval(x, z, hp, kind) == kernel_eval(z, x, hp, kind)


class TestKernelMatrix:
    def test_single_entry(self):
        hp = Hyperparams(np.zeros(2), math.log(2.0))
        np.testing.assert_allclose(kernel_matrix(np.ones((1, 2)), np.ones((1, 2)), hp), [[4.0]])

    def test_symmetric_with_unit_diagonal(self):
        X = np.array([[0.0, 0.0], [1.0, 0.5], [-0.3, 2.0]])
        K = kernel_matrix(X, X, hp_for(2), "rbf")
        np.testing.assert_array_equal(K, K.T)
        np.testing.assert_array_equal(np.diag(K), np.ones(3))

    @pytest.mark.parametrize("kind", KINDS)
    def test_positive_semidefinite(self, kind):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(5, 3))
        K = kernel_matrix(X, X, Hyperparams(rng.normal(0, 0.5, 3)), kind)
        assert np.linalg.eigvalsh(0.5 * (K + K.T)).min() >= -1e-10

    @pytest.mark.parametrize("kind", KINDS)
    def test_entries_match_pointwise_eval(self, kind):
        rng = np.random.default_rng(4)
        X1, X2 = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
        hp = Hyperparams(rng.normal(0, 0.5, 2), 0.3)
        K = kernel_matrix(X1, X2, hp, kind)
        for i in range(4):
            for j in range(3):
                assert K[i, j] == pytest.approx(kernel_eval(X1[i], X2[j], hp, kind), rel=1e-13)

    @pytest.mark.parametrize("kind", KINDS)
    def test_scale_multiplies_by_square(self, kind):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(6, 2))
        hp = Hyperparams(np.zeros(2), 0.0)
        hp3 = Hyperparams(np.zeros(2), math.log(3.0))
        np.testing.assert_allclose(kernel_matrix(X, X, hp3, kind), 9.0 * kernel_matrix(X, X, hp, kind), rtol=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kernel_matrix(np.zeros((2, 2)), np.zeros((2, 3)), hp_for(2))


class TestKernelGrads:
    def test_scale_gradient_is_twice_k(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(4, 2))
        hp = Hyperparams(rng.normal(0, 0.3, 2), 0.4)
        for kind in KINDS:
            g = kernel_grads(X, X, hp, kind)
            np.testing.assert_allclose(g["log_kernel_scale"], 2.0 * kernel_matrix(X, X, hp, kind), rtol=1e-14)

    def test_zero_distance_gives_zero_lengthscale_gradient(self):
        x = np.array([[0.2, -0.1]])
        for kind in KINDS:
            g = kernel_grads(x, x, hp_for(2), kind)
            np.testing.assert_array_equal(g["log_lengthscales"], 0.0)

    @pytest.mark.parametrize("seed", range(100))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        kind = KINDS[seed % 2]
        D = 1 + seed % 3
        X1, X2 = rng.normal(size=(3, D)), rng.normal(size=(4, D))
        hp = Hyperparams(rng.normal(0, 0.5, D), rng.normal(0, 0.3))
        g = kernel_grads(X1, X2, hp, kind)
        theta = hp.to_vector()
        h = 1e-5
        for i in range(D + 1):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            fd = (
                kernel_matrix(X1, X2, Hyperparams.from_vector(tp), kind)
                - kernel_matrix(X1, X2, Hyperparams.from_vector(tm), kind)
            ) / (2 * h)
            an = g["log_lengthscales"][i] if i < D else g["log_kernel_scale"]
            assert np.max(np.abs(an - fd)) <= 1e-6 * max(1.0, np.max(np.abs(fd)))
