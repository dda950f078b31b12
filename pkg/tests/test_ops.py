"""Operator-level contracts: hand-computed values, finite-difference
gradient checks, and the direct-loop vs im2col agreement."""

import numpy as np
import pytest

from gradcheck import check_gradient, max_relative_error
from rfcnn import ops

RNG = np.random.default_rng(1234)
TOL = 1e-6


class TestConvForward:
    def test_identity_1x1(self):
        x = RNG.standard_normal((2, 1, 4, 4))
        w = np.ones((1, 1, 1, 1))
        out, _ = ops.conv2d_forward(x, w)
        assert np.array_equal(out, x)

    def test_all_ones_3x3_hand_values(self):
        x = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
        w = np.ones((1, 1, 3, 3))
        out, _ = ops.conv2d_forward(x, w, (1, 1), (1, 1))
        assert out[0, 0, 1, 1] == 45.0  # sum of 1..9
        assert out[0, 0, 0, 0] == 1 + 2 + 4 + 5

    def test_output_shape_formula(self):
        x = RNG.standard_normal((1, 2, 11, 9))
        w = RNG.standard_normal((3, 2, 3, 3))
        out, _ = ops.conv2d_forward(x, w, (2, 2), (1, 1))
        assert out.shape == (1, 3, (11 + 2 - 3) // 2 + 1, (9 + 2 - 3) // 2 + 1)

    def test_channel_mismatch(self):
        with pytest.raises(ops.ShapeError):
            ops.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 1, 1)))

    def test_zero_sized_output(self):
        with pytest.raises(ops.ShapeError, match="zero-sized"):
            ops.conv2d_forward(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 5, 5)))

    @pytest.mark.parametrize(
        "kernel,stride,padding",
        [((1, 1), (1, 1), (0, 0)), ((3, 3), (1, 1), (1, 1)),
         ((3, 3), (2, 2), (1, 1)), ((5, 5), (2, 2), (2, 2))],
    )
    def test_matches_direct_oracle(self, kernel, stride, padding):
        x = RNG.standard_normal((2, 3, 8, 8))
        w = RNG.standard_normal((4, 3, *kernel))
        fast, _ = ops.conv2d_forward(x, w, stride, padding)
        direct = ops.conv2d_direct(x, w, stride, padding)
        assert max_relative_error(fast, direct) < 1e-13


class TestConvBackward:
    @pytest.mark.parametrize(
        "kernel,stride,padding",
        [((1, 1), (1, 1), (0, 0)), ((3, 3), (1, 1), (1, 1)),
         ((5, 5), (2, 2), (2, 2))],
    )
    def test_gradients_match_finite_differences(self, kernel, stride, padding):
        x = RNG.standard_normal((2, 3, 7, 7))
        w = RNG.standard_normal((2, 3, *kernel))
        target = RNG.standard_normal(
            ops.conv2d_forward(x, w, stride, padding)[0].shape
        )

        def loss():
            return float(np.sum(ops.conv2d_forward(x, w, stride, padding)[0] * target))

        _, cache = ops.conv2d_forward(x, w, stride, padding)
        dx, dw, db = ops.conv2d_backward(target, cache)
        assert db is None
        assert check_gradient(loss, x, dx) < TOL
        assert check_gradient(loss, w, dw) < TOL

    def test_bias_gradient(self):
        x = RNG.standard_normal((2, 2, 5, 5))
        w = RNG.standard_normal((3, 2, 3, 3))
        b = RNG.standard_normal(3)
        target = RNG.standard_normal((2, 3, 5, 5))

        def loss():
            return float(
                np.sum(ops.conv2d_forward(x, w, (1, 1), (1, 1), bias=b)[0] * target)
            )

        _, cache = ops.conv2d_forward(x, w, (1, 1), (1, 1), bias=b)
        _, _, db = ops.conv2d_backward(target, cache)
        assert check_gradient(loss, b, db) < TOL


class TestBatchNorm:
    def test_constant_input_train_gives_zeros(self):
        p = ops.BnParams.for_channels(3)
        x = np.ones((2, 3, 4, 4)) * np.array([1.0, -2.0, 5.0]).reshape(1, 3, 1, 1)
        out, _ = ops.batchnorm_forward(x, p, "train")
        assert np.allclose(out, 0.0)

    def test_gamma_zero_gives_beta(self):
        p = ops.BnParams.for_channels(2)
        p.gamma[...] = 0.0
        p.beta[...] = np.array([0.5, -1.5])
        x = RNG.standard_normal((3, 2, 4, 4))
        out, _ = ops.batchnorm_forward(x, p, "train")
        assert np.allclose(out[:, 0], 0.5) and np.allclose(out[:, 1], -1.5)

    def test_running_stats_updated_in_train_only(self):
        p = ops.BnParams.for_channels(2)
        x = RNG.standard_normal((4, 2, 3, 3)) + 3.0
        ops.batchnorm_forward(x, p, "train")
        assert not np.allclose(p.running_mean, 0.0)
        frozen = p.running_mean.copy()
        ops.batchnorm_forward(x, p, "eval")
        assert np.array_equal(p.running_mean, frozen)

    def test_eval_uses_running_stats(self):
        p = ops.BnParams.for_channels(1)
        p.running_mean[...] = 2.0
        p.running_var[...] = 4.0
        x = np.full((2, 1, 2, 2), 4.0)
        out, _ = ops.batchnorm_forward(x, p, "eval")
        assert np.allclose(out, (4.0 - 2.0) / np.sqrt(4.0 + p.eps))

    def test_too_few_values(self):
        p = ops.BnParams.for_channels(1)
        with pytest.raises(ops.ShapeError):
            ops.batchnorm_forward(np.zeros((1, 1, 1, 1)), p, "train")

    @pytest.mark.parametrize("mode", ["train", "eval"])
    def test_gradients_match_finite_differences(self, mode):
        p = ops.BnParams.for_channels(3)
        p.gamma[...] = RNG.uniform(0.5, 1.5, 3)
        p.beta[...] = RNG.standard_normal(3)
        p.running_mean[...] = RNG.standard_normal(3)
        p.running_var[...] = RNG.uniform(0.5, 2.0, 3)
        x = RNG.standard_normal((4, 3, 3, 3))
        target = RNG.standard_normal(x.shape)
        rm, rv = p.running_mean.copy(), p.running_var.copy()

        def loss():
            p.running_mean[...] = rm  # keep eval statistics frozen
            p.running_var[...] = rv
            return float(np.sum(ops.batchnorm_forward(x, p, mode)[0] * target))

        _, cache = ops.batchnorm_forward(x, p, mode)
        p.running_mean[...] = rm
        p.running_var[...] = rv
        dx, dgamma, dbeta = ops.batchnorm_backward(target, cache)
        assert check_gradient(loss, x, dx) < TOL
        assert check_gradient(loss, p.gamma, dgamma) < TOL
        assert check_gradient(loss, p.beta, dbeta) < TOL


class TestPoolingAndPointwise:
    def test_relu_values(self):
        out, _ = ops.relu_forward(np.array([[[[-1.0, 2.0]]]]))
        assert out.tolist() == [[[[0.0, 2.0]]]]

    def test_maxpool_value_and_routing(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        out, cache = ops.maxpool2x2_forward(x)
        assert out[0, 0, 0, 0] == 4.0
        dx = ops.maxpool2x2_backward(np.ones_like(out), cache)
        assert dx[0, 0].tolist() == [[0.0, 0.0], [0.0, 1.0]]

    def test_maxpool_tie_routes_first_index(self):
        x = np.full((1, 1, 2, 2), 7.0)
        out, cache = ops.maxpool2x2_forward(x)
        dx = ops.maxpool2x2_backward(np.ones_like(out), cache)
        assert dx[0, 0, 0, 0] == 1.0 and dx.sum() == 1.0

    def test_maxpool_odd_extent_truncates(self):
        x = RNG.standard_normal((1, 1, 5, 7))
        out, _ = ops.maxpool2x2_forward(x)
        assert out.shape == (1, 1, 2, 3)
        assert np.isclose(out[0, 0, 0, 0], x[0, 0, :2, :2].max())

    def test_maxpool_extent_one_passthrough(self):
        x = RNG.standard_normal((2, 3, 1, 1))
        out, cache = ops.maxpool2x2_forward(x)
        assert np.array_equal(out, x)
        assert np.array_equal(ops.maxpool2x2_backward(out, cache), x)

    def test_maxpool_gradient(self):
        x = RNG.standard_normal((2, 2, 6, 6))
        target = RNG.standard_normal((2, 2, 3, 3))

        def loss():
            return float(np.sum(ops.maxpool2x2_forward(x)[0] * target))

        _, cache = ops.maxpool2x2_forward(x)
        dx = ops.maxpool2x2_backward(target, cache)
        assert check_gradient(loss, x, dx, h_scale=1e-6) < TOL

    def test_avgpool_value_and_gradient(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        out, cache = ops.avgpool2x2_forward(x)
        assert out[0, 0, 0, 0] == 2.5
        dx = ops.avgpool2x2_backward(np.ones_like(out), cache)
        assert np.allclose(dx, 0.25)

    def test_global_avg_pool(self):
        x = np.full((2, 3, 4, 5), 2.5)
        out, cache = ops.global_avg_pool_forward(x)
        assert out.shape == (2, 3, 1, 1)
        assert np.allclose(out, 2.5)
        dx = ops.global_avg_pool_backward(np.ones_like(out), cache)
        assert np.allclose(dx, 1.0 / 20)

    def test_linear_gradient(self):
        x = RNG.standard_normal((3, 5))
        w = RNG.standard_normal((5, 4))
        b = RNG.standard_normal(4)
        target = RNG.standard_normal((3, 4))

        def loss():
            return float(np.sum(ops.linear_forward(x, w, b)[0] * target))

        _, cache = ops.linear_forward(x, w, b)
        dx, dw, db = ops.linear_backward(target, cache)
        assert check_gradient(loss, x, dx) < TOL
        assert check_gradient(loss, w, dw) < TOL
        assert check_gradient(loss, b, db) < TOL


class TestFreqConcat:
    def test_fraction_values(self):
        x = np.zeros((1, 1, 256, 3))
        out, _ = ops.freq_concat_forward(x, "fraction")
        assert out.shape == (1, 2, 256, 3)
        assert out[0, 1, 128, 0] == pytest.approx(0.5)
        assert out[0, 1, 0, 2] == 0.0

    def test_centered_values(self):
        x = np.zeros((1, 1, 256, 2))
        out, _ = ops.freq_concat_forward(x, "centered")
        assert out[0, 1, 0, 0] == pytest.approx(-1.0)
        assert out[0, 1, 255, 1] == pytest.approx(1.0)

    def test_original_channels_bit_identical(self):
        x = RNG.standard_normal((2, 3, 8, 5))
        out, _ = ops.freq_concat_forward(x)
        assert np.array_equal(out[:, :3], x)

    def test_appended_channel_constant_over_batch_and_time(self):
        x = RNG.standard_normal((3, 2, 6, 9))
        out, _ = ops.freq_concat_forward(x)
        plane = out[:, -1]
        assert np.all(plane.std(axis=0) == 0)      # batch-invariant
        assert np.all(plane.std(axis=2) == 0)      # time-invariant

    def test_backward_passthrough(self):
        x = RNG.standard_normal((2, 2, 4, 4))
        _, cache = ops.freq_concat_forward(x)
        dout = RNG.standard_normal((2, 3, 4, 4))
        dx = ops.freq_concat_backward(dout, cache)
        assert np.array_equal(dx, dout[:, :2])


class TestShakeShake:
    def test_eval_is_average(self):
        a = np.full((1, 1, 1, 1), 2.0)
        b = np.full((1, 1, 1, 1), 4.0)
        out, _ = ops.shake_shake_forward(a, b, "eval")
        assert out[0, 0, 0, 0] == 3.0

    def test_equal_branches_fixed_point(self):
        rng = np.random.default_rng(0)
        a = RNG.standard_normal((4, 2, 3, 3))
        out, _ = ops.shake_shake_forward(a, a.copy(), "train", rng=rng)
        assert np.allclose(out, a)

    def test_train_mean_near_half(self):
        rng = np.random.default_rng(42)
        a = np.ones((10_000, 1, 1, 1))
        b = np.zeros((10_000, 1, 1, 1))
        out, _ = ops.shake_shake_forward(a, b, "train", rng=rng)
        assert abs(out.mean() - 0.5) < 0.02

    def test_pinned_alpha_is_exact_adjoint(self):
        a = RNG.standard_normal((2, 2, 3, 3))
        b = RNG.standard_normal((2, 2, 3, 3))
        target = RNG.standard_normal(a.shape)

        def loss():
            return float(
                np.sum(ops.shake_shake_forward(a, b, "train", alpha=0.3)[0] * target)
            )

        _, cache = ops.shake_shake_forward(a, b, "train", alpha=0.3)
        da, db_ = ops.shake_shake_backward(target, cache)
        assert check_gradient(loss, a, da) < TOL
        assert check_gradient(loss, b, db_) < TOL

    def test_backward_draws_independent_beta(self):
        rng = np.random.default_rng(9)
        a = np.ones((8, 1, 2, 2))
        b = np.zeros((8, 1, 2, 2))
        _, cache = ops.shake_shake_forward(a, b, "train", rng=rng)
        da, db_ = ops.shake_shake_backward(np.ones_like(a), cache, rng=rng)
        alphas = cache[0].reshape(-1)
        betas = da[:, 0, 0, 0]
        assert not np.allclose(alphas, betas)
        assert np.allclose(da + db_, 1.0)  # coefficients stay convex

    def test_shape_mismatch(self):
        with pytest.raises(ops.ShapeError):
            ops.shake_shake_forward(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3)))

    def test_batch_level_single_coefficient(self):
        rng = np.random.default_rng(5)
        a = np.ones((6, 1, 2, 2))
        b = np.zeros((6, 1, 2, 2))
        out, _ = ops.shake_shake_forward(a, b, "train", rng=rng, level="batch")
        assert len(np.unique(out)) == 1


class TestResidualAdd:
    def test_values(self):
        a = RNG.standard_normal((2, 2, 3, 3))
        assert np.array_equal(ops.residual_add(a, np.zeros_like(a)), a)
        assert np.array_equal(ops.residual_add(np.zeros_like(a), a), a)

    def test_shape_mismatch(self):
        with pytest.raises(ops.ShapeError):
            ops.residual_add(np.zeros((1, 1, 2, 2)), np.zeros((1, 2, 2, 2)))


class TestDeterministicReplay:
    def test_same_seed_bit_identical(self):
        a = RNG.standard_normal((4, 2, 3, 3))
        b = RNG.standard_normal((4, 2, 3, 3))
        runs = []
        for _ in range(2):
            rng = np.random.default_rng(77)
            out, cache = ops.shake_shake_forward(a, b, "train", rng=rng)
            da, db_ = ops.shake_shake_backward(np.ones_like(a), cache, rng=rng)
            runs.append((out, da, db_))
        for x, y in zip(runs[0], runs[1]):
            assert np.array_equal(x, y)
