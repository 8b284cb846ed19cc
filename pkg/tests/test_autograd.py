"""Tensor core and operator tests: exact identities, frozen oracle
values, and finite-difference gradient checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import fd_check
from helpers import bicubic_half_loop, conv2d_loop, numeric_gradient, rel_error
from pixelclust.errors import ConfigurationError, DivergenceError
from pixelclust.nnops import (
    batchnorm,
    bicubic_down2,
    conv1d_channels,
    conv2d,
    eca_attention,
    gaussian_blur,
    gaussian_kernel1d,
    maxpool2,
    relu_tanh,
    softmax_channels,
    transposed_conv2,
)
from pixelclust.optim import OptimizerConfig, sgd_step
from pixelclust.tensor import Parameter, Tensor, constant, sum_all

RNG = np.random.default_rng(20240817)


def leaf(a):
    return Tensor(np.array(a, dtype=np.float64), requires_grad=True)


# ----------------------------------------------------------------- tensor

class TestTensor:
    def test_rank_limit(self):
        with pytest.raises(ConfigurationError):
            Tensor(np.zeros((2, 2, 2, 2, 2)))

    def test_backward_needs_scalar(self):
        t = leaf(np.ones((2, 2)))
        with pytest.raises(ConfigurationError):
            t.backward()

    def test_float64_everywhere(self):
        t = Tensor(np.ones((3,), dtype=np.float32))
        assert t.data.dtype == np.float64

    def test_arithmetic_gradients(self):
        a = RNG.standard_normal((2, 3))
        b = RNG.standard_normal((2, 3))
        err = fd_check(lambda x, y: sum_all(x * y + x - 0.5 * y), [a, b])
        assert err < 1e-6

    def test_grad_accumulates_over_reuse(self):
        x = leaf(2.0)
        y = x * 3.0 + x * 4.0
        y.backward()
        assert x.grad == pytest.approx(7.0)


# ------------------------------------------------------------------ conv2d

class TestConv2d:
    def test_identity_1x1(self):
        x = leaf(RNG.standard_normal((3, 5, 4)))
        w = np.eye(3).reshape(3, 3, 1, 1)
        out = conv2d(x, constant(w), constant(np.zeros(3)))
        assert np.max(np.abs(out.data - x.data)) < 1e-12

    def test_identity_3x3_center(self):
        x = leaf(RNG.standard_normal((2, 6, 6)))
        w = np.zeros((2, 2, 3, 3))
        for c in range(2):
            w[c, c, 1, 1] = 1.0
        out = conv2d(x, constant(w), constant(np.zeros(2)))
        assert np.max(np.abs(out.data - x.data)) < 1e-12

    def test_zero_input_gives_bias(self):
        w = RNG.standard_normal((4, 2, 3, 3))
        b = RNG.standard_normal(4)
        out = conv2d(constant(np.zeros((2, 5, 5))), constant(w), constant(b))
        assert np.allclose(out.data, b[:, None, None])

    @pytest.mark.parametrize("k", [1, 3])
    def test_matches_loop_oracle(self, k):
        x = RNG.standard_normal((1, 4, 4))
        w = RNG.standard_normal((2, 1, k, k))
        b = RNG.standard_normal(2)
        out = conv2d(constant(x), constant(w), constant(b))
        assert np.max(np.abs(out.data - conv2d_loop(x, w, b))) < 1e-12

    @pytest.mark.parametrize("k", [1, 3])
    def test_gradients(self, k):
        x = RNG.standard_normal((2, 5, 4))
        w = RNG.standard_normal((3, 2, k, k))
        b = RNG.standard_normal(3)
        assert fd_check(conv2d, [x, w, b]) < 1e-4

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            conv2d(constant(np.zeros((2, 4, 4))), constant(np.zeros((1, 3, 1, 1))))

    def test_kernel_size_restricted(self):
        with pytest.raises(ConfigurationError):
            conv2d(constant(np.zeros((1, 4, 4))), constant(np.zeros((1, 1, 5, 5))))


# --------------------------------------------------------------- batchnorm

class TestBatchnorm:
    def test_constant_channel_is_beta(self):
        x = constant(np.full((2, 4, 4), 3.7))
        beta = np.array([0.5, -1.25])
        out = batchnorm(x, constant(np.ones(2)), constant(beta))
        assert np.allclose(out.data, beta[:, None, None])

    def test_normalization_formula(self):
        x = RNG.standard_normal((1, 4, 6)) * 2 + 1
        out = batchnorm(constant(x), constant(np.ones(1)), constant(np.zeros(1)))
        m, v = x.mean(), x.var()
        assert np.allclose(out.data, (x - m) / np.sqrt(v + 1e-5))

    def test_unit_stats_for_wide_channels(self):
        # eps=1e-5 biases the variance by eps/var, so the documented
        # 1e-6 tolerance needs channel variance well above 10.
        x = RNG.uniform(-20, 20, size=(3, 8, 8))
        out = batchnorm(constant(x), constant(np.ones(3)), constant(np.zeros(3))).data
        assert np.max(np.abs(out.mean(axis=(1, 2)))) < 1e-9
        assert np.max(np.abs(out.var(axis=(1, 2)) - 1.0)) < 1e-6

    def test_gradients(self):
        x = RNG.standard_normal((2, 4, 4))
        g = RNG.uniform(0.5, 1.5, 2)
        b = RNG.standard_normal(2)
        assert fd_check(batchnorm, [x, g, b]) < 1e-4

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(-5, 5))
    def test_shift_invariance(self, seed, shift):
        x = np.random.default_rng(seed).standard_normal((1, 3, 3))
        args = (constant(np.ones(1)), constant(np.zeros(1)))
        a = batchnorm(constant(x), *args).data
        b = batchnorm(constant(x + shift), *args).data
        assert np.allclose(a, b, atol=1e-8)


# --------------------------------------------------------------- relu_tanh

class TestReluTanh:
    def test_values(self):
        x = constant(np.array([0.0, 1.0, -2.0]))
        out = relu_tanh(x).data
        assert out[0] == 0.0
        assert out[1] == pytest.approx(1.0 + 0.4 * math.tanh(1.0), abs=1e-12)
        # ReLU branch dead for negative input; only the tanh part remains.
        assert out[2] == pytest.approx(0.4 * math.tanh(-2.0), abs=1e-12)

    def test_custom_weights(self):
        x = constant(np.array([2.0, -1.0]))
        out = relu_tanh(x, w_relu=0.5, w_tanh=2.0).data
        assert out[0] == pytest.approx(1.0 + 2.0 * math.tanh(2.0))
        assert out[1] == pytest.approx(2.0 * math.tanh(-1.0))

    def test_gradient_away_from_kink(self):
        x = RNG.standard_normal((2, 4, 4))
        x = np.where(np.abs(x) < 0.1, x + 0.25, x)  # clear the ReLU corner
        assert fd_check(relu_tanh, [x]) < 1e-4

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-10, 10), st.floats(-10, 10))
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        fa, fb = relu_tanh(constant([lo])).data[0], relu_tanh(constant([hi])).data[0]
        assert fa <= fb + 1e-12


# ---------------------------------------------------------------- maxpool2

class TestMaxpool2:
    def test_constant(self):
        out = maxpool2(constant(np.full((1, 4, 6), 2.5)))
        assert out.data.shape == (1, 2, 3)
        assert np.all(out.data == 2.5)

    def test_single_window(self):
        out = maxpool2(constant(np.array([[[1.0, 2.0], [3.0, 4.0]]])))
        assert out.data.reshape(()) == 4.0

    def test_tie_routes_to_first_row_major(self):
        x = leaf(np.full((1, 2, 2), 1.5))
        sum_all(maxpool2(x)).backward()
        expected = np.array([[[1.0, 0.0], [0.0, 0.0]]])
        assert np.array_equal(x.grad, expected)

    def test_blockwise_max(self):
        x = RNG.standard_normal((3, 6, 8))
        out = maxpool2(constant(x)).data
        ref = x.reshape(3, 3, 2, 4, 2).max(axis=(2, 4))
        assert np.array_equal(out, ref)

    def test_gradient(self):
        x = RNG.standard_normal((2, 4, 4))  # continuous draws never tie
        assert fd_check(maxpool2, [x]) < 1e-4


# ----------------------------------------------------------- bicubic_down2

class TestBicubicDown2:
    def test_constant(self):
        out = bicubic_down2(np.full((3, 6, 8), 0.75))
        assert out.shape == (3, 3, 4)
        assert np.max(np.abs(out - 0.75)) < 1e-12

    def test_linear_ramp_interior(self):
        ramp = np.tile(np.arange(16.0), (1, 4, 1))
        out = bicubic_down2(ramp)
        # Interior samples of a linear ramp reduce to the midpoint values;
        # border columns feel the edge replication.
        expected = np.arange(8) * 2 + 0.5
        assert np.max(np.abs(out[0, 1, 1:-1] - expected[1:-1])) < 1e-9

    def test_checkerboard_matches_loop_oracle(self):
        board = np.indices((8, 8)).sum(axis=0) % 2
        x = np.stack([board, 1.0 - board, board * 0.5]).astype(np.float64)
        assert np.max(np.abs(bicubic_down2(x) - bicubic_half_loop(x))) < 1e-9

    def test_random_matches_loop_oracle(self):
        x = RNG.standard_normal((2, 10, 6))
        assert np.max(np.abs(bicubic_down2(x) - bicubic_half_loop(x))) < 1e-12

    def test_odd_dims_rejected(self):
        with pytest.raises(ConfigurationError):
            bicubic_down2(np.zeros((1, 5, 6)))


# --------------------------------------------------------- transposed conv

class TestTransposedConv2:
    def test_all_ones_kernel_broadcasts_value(self):
        x = constant(np.full((1, 3, 3), 1.25))
        w = constant(np.ones((1, 1, 2, 2)))
        out = transposed_conv2(x, w)
        assert out.data.shape == (1, 6, 6)
        assert np.all(out.data == 1.25)

    def test_zero_input(self):
        out = transposed_conv2(
            constant(np.zeros((2, 3, 3))), constant(RNG.standard_normal((2, 4, 2, 2)))
        )
        assert out.data.shape == (4, 6, 6)
        assert np.all(out.data == 0.0)

    def test_gradients(self):
        x = RNG.standard_normal((2, 3, 4))
        w = RNG.standard_normal((2, 3, 2, 2))
        assert fd_check(transposed_conv2, [x, w]) < 1e-4


# --------------------------------------------------------------- attention

class TestEcaAttention:
    def test_zero_weight_halves_input(self):
        x = RNG.standard_normal((5, 3, 3))
        out = eca_attention(constant(x), constant(np.zeros(3)))
        assert np.max(np.abs(out.data - x / 2.0)) < 1e-15

    def test_single_tap_scale(self):
        x = np.zeros((4, 2, 2))
        x[1] = 3.0
        w = np.array([0.0, 0.7, 0.0])  # center tap only
        out = eca_attention(constant(x), constant(w))
        scale = 1.0 / (1.0 + math.exp(-0.7 * 3.0))
        assert out.data[1, 0, 0] == pytest.approx(3.0 * scale, abs=1e-12)
        assert np.all(out.data[0] == 0.0)

    def test_gradients(self):
        x = RNG.standard_normal((4, 3, 3))
        w = RNG.standard_normal(3) * 0.5
        assert fd_check(eca_attention, [x, w]) < 1e-4

    def test_conv1d_gradients(self):
        v = RNG.standard_normal(6)
        w = RNG.standard_normal(3)
        assert fd_check(conv1d_channels, [v, w]) < 1e-4


# -------------------------------------------------------------- gaussians

class TestGaussianBlur:
    def test_kernel_normalized_and_odd(self):
        for sigma in (0.5, 1.0, 2.0, 4.0, 8.0):
            k = gaussian_kernel1d(sigma, 11)
            assert k.size == 11
            assert k.sum() == pytest.approx(1.0, abs=1e-12)
        with pytest.raises(ConfigurationError):
            gaussian_kernel1d(1.0, 4)

    def test_constant_preserved(self):
        k = gaussian_kernel1d(2.0, 7)
        out = gaussian_blur(constant(np.full((2, 6, 6), 1.5)), k)
        assert np.max(np.abs(out.data - 1.5)) < 1e-12

    def test_gradient(self):
        x = RNG.standard_normal((1, 6, 6))
        k = gaussian_kernel1d(1.0, 5)
        assert fd_check(lambda t: gaussian_blur(t, k), [x]) < 1e-4


class TestSoftmax:
    def test_rows_sum_to_one(self):
        x = RNG.standard_normal((5, 3, 3)) * 10
        s = softmax_channels(constant(x)).data
        assert np.allclose(s.sum(axis=0), 1.0)
        assert np.all(s > 0)

    def test_shift_invariant(self):
        x = RNG.standard_normal((4, 2, 2))
        a = softmax_channels(constant(x)).data
        b = softmax_channels(constant(x + 100.0)).data
        assert np.allclose(a, b)

    def test_gradient(self):
        x = RNG.standard_normal((3, 3, 2))
        assert fd_check(softmax_channels, [x]) < 1e-4


# -------------------------------------------------------------- optimizer

def make_param(value, name="p"):
    p = Parameter(np.array(value, dtype=np.float64), name=name)
    return p


class TestSgd:
    def test_plain_step_without_momentum(self):
        p = make_param([1.0])
        p.grad = np.array([0.1])
        sgd_step([p], OptimizerConfig(learning_rate=0.05, momentum=0.0))
        assert p.data[0] == pytest.approx(1.0 - 0.05 * 0.1, abs=1e-15)

    def test_momentum_recurrence_two_steps(self):
        p = make_param([1.0])
        cfg = OptimizerConfig(learning_rate=0.05, momentum=0.9)
        p.grad = np.array([0.1])
        sgd_step([p], cfg)
        assert p.data[0] == pytest.approx(1.0 - 0.05 * 0.1, abs=1e-15)
        p.grad = np.array([0.1])
        sgd_step([p], cfg)
        # m2 = 0.9*0.1 + 0.1 = 0.19; step = lr * 1.9g
        assert p.data[0] == pytest.approx(0.995 - 0.05 * 0.19, abs=1e-15)

    def test_zero_gradient_noop(self):
        p = make_param([2.0])
        p.grad = np.zeros(1)
        sgd_step([p], OptimizerConfig())
        assert p.data[0] == 2.0
        assert np.all(p.momentum == 0.0)

    def test_missing_gradient_noop(self):
        p = make_param([2.0])
        sgd_step([p], OptimizerConfig())
        assert p.data[0] == 2.0

    def test_gradients_cleared_after_step(self):
        p = make_param([1.0])
        p.grad = np.array([1.0])
        sgd_step([p], OptimizerConfig())
        assert p.grad is None

    def test_nonfinite_gradient_aborts(self):
        p = make_param([1.0], name="w.bad")
        p.grad = np.array([np.nan])
        with pytest.raises(DivergenceError, match="w.bad"):
            sgd_step([p], OptimizerConfig())

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            OptimizerConfig(learning_rate=0.0)
        with pytest.raises(ConfigurationError):
            OptimizerConfig(momentum=1.0)
        with pytest.raises(ConfigurationError):
            OptimizerConfig(iterations=0)
