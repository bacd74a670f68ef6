import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from steinmatch.exceptions import ArgumentError, DegenerateInputError
from steinmatch.kernels import (
    FeatureKernel,
    Linear,
    LinearFeatures,
    LinearPlusRandom,
    RandomCosineFeatures,
    Rbf,
    feature_eval,
    feature_grad,
    kernel_eval,
    kernel_grad_x,
    make_linear_plus_random,
    make_random_cosine_bank,
    median_bandwidth,
)


def _kernels(d=3):
    return [
        Rbf(0.7),
        Rbf(2.5),
        Linear(),
        FeatureKernel(make_random_cosine_bank(d, 32, 1.3, 0)),
        make_linear_plus_random(d, 12, 0.9, 1),
    ]


KERNEL_IDS = ["rbf-0.7", "rbf-2.5", "linear", "cosine", "linear+random"]


def _brute_rbf(x, y, h):
    return np.exp(-np.sum((np.asarray(x) - np.asarray(y)) ** 2) / (2 * h * h))


class TestKernelEval:
    def test_rbf_coincident(self):
        assert kernel_eval(Rbf(0.3), [1.0, 2.0], [1.0, 2.0]) == 1.0

    def test_linear(self):
        assert kernel_eval(Linear(), [1.0, 2.0], [0.0, 1.0]) == 3.0

    def test_constant_cosine_feature(self):
        bank = RandomCosineFeatures(np.zeros((1, 2)), np.zeros(1), 1.0)
        assert kernel_eval(FeatureKernel(bank), [5.0, -1.0], [0.3, 2.0]) == pytest.approx(2.0, abs=1e-15)

    def test_rbf_value(self):
        assert kernel_eval(Rbf(1.0), [0.0, 0.0], [2.0, 0.0]) == pytest.approx(0.1353352832366127, rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ArgumentError):
            kernel_eval(Rbf(1.0), [0.0, 0.0], [1.0, 0.0, 0.0])

    def test_nonpositive_bandwidth(self):
        with pytest.raises(ArgumentError):
            Rbf(0.0)

    @pytest.mark.parametrize("k", _kernels(), ids=KERNEL_IDS)
    def test_matrix_matches_pointwise(self, k):
        rng = np.random.default_rng(3)
        X, Y = rng.standard_normal((4, 3)), rng.standard_normal((5, 3))
        K = k.matrix(X, Y)
        for i in range(4):
            for j in range(5):
                assert K[i, j] == pytest.approx(kernel_eval(k, X[i], Y[j]), rel=1e-12, abs=1e-14)

    def test_rbf_matrix_against_brute_force(self):
        rng = np.random.default_rng(4)
        X, Y = rng.standard_normal((6, 2)), rng.standard_normal((3, 2))
        K = Rbf(0.8).matrix(X, Y)
        expected = [[_brute_rbf(x, y, 0.8) for y in Y] for x in X]
        np.testing.assert_allclose(K, expected, rtol=1e-13)

    def test_linear_plus_random_decomposes(self):
        k = make_linear_plus_random(3, 10, 1.1, 2)
        rng = np.random.default_rng(5)
        x, y = rng.standard_normal((2, 3))
        phi = np.sqrt(2) * np.cos(k.bank.directions @ np.stack([x, y]).T / 1.1 + k.bank.offsets[:, None])
        expected = k.alpha * (1 + x @ y) + k.beta * phi[:, 0] @ phi[:, 1]
        assert kernel_eval(k, x, y) == pytest.approx(expected, rel=1e-12)


class TestKernelGradients:
    def test_rbf_coincident(self):
        np.testing.assert_array_equal(kernel_grad_x(Rbf(1.0), [1.0, 2.0], [1.0, 2.0]), [0.0, 0.0])

    def test_linear(self):
        np.testing.assert_array_equal(kernel_grad_x(Linear(), [4.0, -7.0], [0.0, 1.0]), [0.0, 1.0])

    def test_rbf_value(self):
        np.testing.assert_allclose(kernel_grad_x(Rbf(1.0), [1.0, 0.0], [0.0, 0.0]), [-np.exp(-0.5), 0.0], rtol=1e-14)

    @pytest.mark.parametrize("k", _kernels(), ids=KERNEL_IDS)
    def test_finite_differences(self, k):
        rng = np.random.default_rng(6)
        eps = 1e-5
        for x, y in rng.standard_normal((100, 2, 3)):
            fd = np.array([(kernel_eval(k, x + e, y) - kernel_eval(k, x - e, y)) / (2 * eps) for e in eps * np.eye(3)])
            an = kernel_grad_x(k, x, y)
            assert np.linalg.norm(an - fd) <= 1e-5 * max(np.linalg.norm(an), 1.0)

    @pytest.mark.parametrize("k", _kernels(), ids=KERNEL_IDS)
    def test_grad_trace_finite_differences(self, k):
        rng = np.random.default_rng(7)
        eps = 1e-4
        X, Y = rng.standard_normal((5, 3)), rng.standard_normal((4, 3))
        fd = np.zeros((5, 4))
        for i in range(3):
            e = np.zeros(3)
            e[i] = eps
            fd += (k.grad_x(X, Y + e)[:, :, i] - k.grad_x(X, Y - e)[:, :, i]) / (2 * eps)
        np.testing.assert_allclose(k.grad_trace(X, Y), fd, atol=1e-7)

    @pytest.mark.parametrize("k", _kernels(), ids=KERNEL_IDS)
    def test_grad_x_sum(self, k):
        rng = np.random.default_rng(8)
        X, Y = rng.standard_normal((7, 3)), rng.standard_normal((4, 3))
        np.testing.assert_allclose(k.grad_x_sum(X, Y), k.grad_x(X, Y).sum(axis=0), atol=1e-13)


class TestFeatures:
    def test_linear_bank(self):
        np.testing.assert_array_equal(feature_eval(LinearFeatures(2), [2.0, 3.0]), [2.0, 3.0, 1.0])

    def test_single_cosine_at_pi(self):
        bank = RandomCosineFeatures(np.zeros((1, 3)), np.array([np.pi]), 1.0)
        assert feature_eval(bank, [0.1, 0.2, 0.3])[0] == pytest.approx(-np.sqrt(2), rel=1e-15)

    @pytest.mark.parametrize("bank", [LinearFeatures(3), make_random_cosine_bank(3, 20, 0.8, 9)], ids=["linear", "cosine"])
    def test_feature_grad_finite_differences(self, bank):
        rng = np.random.default_rng(10)
        eps = 1e-6
        for x in rng.standard_normal((20, 3)):
            fd = np.stack([(feature_eval(bank, x + e) - feature_eval(bank, x - e)) / (2 * eps) for e in eps * np.eye(3)], axis=1)
            an = feature_grad(bank, x)
            assert np.linalg.norm(an - fd) <= 1e-6 * max(np.linalg.norm(an), 1.0)

    def test_gram_approximates_rbf(self):
        bank = make_random_cosine_bank(2, 4096, 1.0, 11)
        rng = np.random.default_rng(12)
        for x, y in rng.standard_normal((20, 2, 2)):
            approx = feature_eval(bank, x) @ feature_eval(bank, y)
            assert abs(approx - _brute_rbf(x, y, 1.0)) <= 0.05

    def test_gram_error_shrinks_with_m(self):
        rng = np.random.default_rng(13)
        X = rng.standard_normal((30, 2))
        exact = Rbf(1.0).matrix(X, X)
        errs = []
        for m in (256, 1024, 4096):
            trial = []
            for seed in range(10):
                F = make_random_cosine_bank(2, m, 1.0, seed).features(X)
                trial.append(np.abs(F @ F.T - exact).max())
            errs.append(np.median(trial))
        assert errs[0] > errs[1] > errs[2]

    def test_invalid_offsets(self):
        with pytest.raises(ArgumentError):
            RandomCosineFeatures(np.zeros((1, 1)), np.array([2 * np.pi]), 1.0)

    def test_invalid_directions(self):
        with pytest.raises(ArgumentError):
            RandomCosineFeatures(np.array([[np.inf]]), np.zeros(1), 1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ArgumentError):
            feature_eval(LinearFeatures(2), [1.0, 2.0, 3.0])


class TestMedianBandwidth:
    def test_three_points(self):
        h = median_bandwidth(np.array([[0.0], [1.0], [3.0]]))
        assert h**2 == pytest.approx(4 / (2 * np.log(4)), rel=1e-12)
        assert h**2 == pytest.approx(1.44270, abs=1e-5)

    def test_two_points(self):
        h = median_bandwidth(np.array([[0.0, 0.0], [1.0, 1.0]]))
        assert h**2 == pytest.approx(1 / np.log(3), rel=1e-12)

    def test_identical_particles(self):
        with pytest.raises(DegenerateInputError):
            median_bandwidth(np.zeros((3, 1)))

    def test_single_particle(self):
        with pytest.raises(DegenerateInputError):
            median_bandwidth(np.zeros((1, 2)))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.1, 10.0), st.integers(0, 1000))
    def test_scale_equivariance(self, c, seed):
        X = np.random.default_rng(seed).standard_normal((9, 2))
        assert median_bandwidth(c * X) == pytest.approx(c * median_bandwidth(X), rel=1e-10)


class TestBankConstruction:
    def test_deterministic(self):
        a, b = make_random_cosine_bank(3, 50, 1.0, 99), make_random_cosine_bank(3, 50, 1.0, 99)
        assert a.directions.tobytes() == b.directions.tobytes()
        assert a.offsets.tobytes() == b.offsets.tobytes()

    def test_direction_mean(self):
        bank = make_random_cosine_bank(1, 2000, 1.0, 3)
        assert abs(bank.directions.mean()) <= 0.07

    def test_offsets_in_range(self):
        off = make_random_cosine_bank(4, 5000, 1.0, 4).offsets
        assert off.min() >= 0 and off.max() < 2 * np.pi

    def test_with_bandwidth_keeps_draws(self):
        bank = make_random_cosine_bank(2, 8, 1.0, 5)
        other = bank.with_bandwidth(3.0)
        assert other.bandwidth == 3.0
        np.testing.assert_array_equal(other.directions, bank.directions)

    def test_linear_fallback(self):
        assert isinstance(make_linear_plus_random(5, 6, 1.0, 0), Linear)

    def test_linear_plus_random_weights(self):
        k = make_linear_plus_random(5, 10, 1.0, 0)
        assert isinstance(k, LinearPlusRandom)
        assert k.alpha == pytest.approx(1 / 6)
        assert k.beta == pytest.approx(1 / 4)
        assert k.bank.size == 4
        assert k.size == 10

    def test_one_random_feature(self):
        assert make_linear_plus_random(5, 7, 1.0, 0).bank.size == 1


@pytest.mark.parametrize("k", _kernels(2), ids=KERNEL_IDS)
@settings(max_examples=25, deadline=None)
@given(X=arrays(np.float64, (6, 2), elements=st.floats(-5, 5)))
def test_gram_is_symmetric_psd(k, X):
    K = k.matrix(X, X)
    np.testing.assert_allclose(K, K.T, atol=1e-12)
    assert np.linalg.eigvalsh(0.5 * (K + K.T)).min() >= -1e-8 * max(1.0, np.abs(K).max())
