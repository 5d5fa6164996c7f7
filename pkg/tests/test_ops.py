"""Layer operations against independent oracles.

Forward passes are checked against loop-level reference implementations;
input gradients against central finite differences (exact for piecewise
affine maps away from kinks) and against explicitly materialized
transpose matrices on tiny instances.
"""

import numpy as np
import pytest

from conftest import (brute_conv, brute_maxpool, fd_gradient, max_rel_err,
                      pool_safe_input, relu_safe_input)
from erfscope.ops import (ConvSpec, bilinear_upsample_forward,
                          bilinear_upsample_input_grad, conv2d_forward,
                          conv2d_input_grad, conv_output_size,
                          global_avgpool_forward, global_avgpool_input_grad,
                          maxpool_forward, maxpool_input_grad, relu_forward,
                          relu_input_grad, same_padding)
from erfscope.tensor import Kernel, Tensor

SPEC_GRID = [
    ConvSpec(1, 1, 0), ConvSpec(1, 1, 1), ConvSpec(2, 1, 1),
    ConvSpec(1, 2, 2), ConvSpec(1, 3, 3), ConvSpec(2, 2, 2),
    ConvSpec(1, 6, 6), ConvSpec(3, 1, 0),
]


# =========================================================================
# Shape arithmetic
# =========================================================================

class TestShapes:
    def test_output_size_cases(self):
        assert conv_output_size(8, 3, ConvSpec(1, 1, 1)) == 8
        assert conv_output_size(8, 3, ConvSpec(2, 1, 1)) == 4
        assert conv_output_size(9, 3, ConvSpec(1, 2, 0)) == 5
        assert conv_output_size(768, 3, ConvSpec(1, 6, 6)) == 768
        assert conv_output_size(5, 5, ConvSpec(1, 1, 0)) == 1

    def test_output_size_too_small(self):
        with pytest.raises(ValueError):
            conv_output_size(4, 3, ConvSpec(1, 2, 0))

    @pytest.mark.parametrize("k,d", [(1, 1), (3, 1), (3, 2), (3, 6), (5, 6), (3, 18)])
    def test_same_padding_preserves_size(self, k, d):
        p = same_padding(k, d)
        assert conv_output_size(31, k, ConvSpec(1, d, p)) == 31
        assert conv_output_size(64, k, ConvSpec(1, d, p)) == 64

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValueError):
            ConvSpec(0, 1, 0)
        with pytest.raises(ValueError):
            ConvSpec(1, 0, 0)
        with pytest.raises(ValueError):
            ConvSpec(1, 1, -1)


# =========================================================================
# Convolution
# =========================================================================

class TestConvForward:
    @pytest.mark.parametrize("spec", SPEC_GRID)
    def test_matches_brute_force(self, rng, spec):
        for _ in range(4):
            kh = int(rng.choice([1, 3, 5]))
            size = max(16, spec.dilation * (kh - 1) + 2)
            x = rng.uniform(-1, 1, (size, size + 3, 2))
            k = Kernel(rng.uniform(-1, 1, (kh, kh, 2, 3)), rng.uniform(-1, 1, 3))
            got = conv2d_forward(Tensor(x), k, spec).data
            want = brute_conv(x, k.weights, k.bias, spec.stride,
                              spec.dilation, spec.padding)
            assert got.shape == want.shape
            assert np.allclose(got, want, atol=1e-12)

    def test_one_by_one_is_channel_mix(self, rng):
        x = rng.uniform(-1, 1, (6, 6, 3))
        k = Kernel(rng.uniform(-1, 1, (1, 1, 3, 2)), np.zeros(2))
        got = conv2d_forward(Tensor(x), k, ConvSpec()).data
        assert np.allclose(got, x @ k.weights[0, 0])

    def test_bias_added(self):
        x = np.zeros((4, 4, 1))
        k = Kernel(np.zeros((3, 3, 1, 2)), np.array([1.5, -2.0]))
        out = conv2d_forward(Tensor(x), k, ConvSpec(1, 1, 1)).data
        assert np.allclose(out[..., 0], 1.5)
        assert np.allclose(out[..., 1], -2.0)

    def test_dilation_tap_offsets(self):
        # a one-hot kernel corner reads the input dilation steps away
        x = np.zeros((13, 13, 1))
        x[2, 2, 0] = 1.0
        w = np.zeros((3, 3, 1, 1))
        w[0, 0, 0, 0] = 1.0
        out = conv2d_forward(Tensor(x), Kernel(w, np.zeros(1)),
                             ConvSpec(1, 6, 6)).data
        # tap (0,0) at dilation 6 with same padding sees pixel (i-6, j-6)
        assert out[8, 8, 0] == 1.0
        assert out.sum() == 1.0


class TestConvInputGrad:
    @pytest.mark.parametrize("spec", SPEC_GRID)
    def test_matches_finite_differences(self, rng, spec):
        kh = 3
        size = max(10, spec.dilation * (kh - 1) + 2)
        x = rng.uniform(-1, 1, (size, size, 2))
        k = Kernel(rng.uniform(-1, 1, (kh, kh, 2, 2)), rng.uniform(-1, 1, 2))
        oh = conv_output_size(size, kh, spec)
        ow = conv_output_size(size, kh, spec)
        gy = rng.uniform(-1, 1, (oh, ow, 2))

        got = conv2d_input_grad(Tensor(gy), k, spec, x.shape).data

        def objective(arr):
            return float(np.sum(conv2d_forward(Tensor(arr), k, spec).data * gy))

        want = fd_gradient(objective, x)
        assert max_rel_err(got, want) < 1e-6

    def test_matches_explicit_transpose(self, rng):
        # materialize the linear map column by column; grad must be M^T gy
        spec = ConvSpec(1, 2, 2)
        x_shape = (6, 6, 2)
        k = Kernel(rng.uniform(-1, 1, (3, 3, 2, 2)), rng.uniform(-1, 1, 2))
        zero_out = conv2d_forward(Tensor(np.zeros(x_shape)), k, spec).data.ravel()
        cols = []
        for idx in np.ndindex(*x_shape):
            e = np.zeros(x_shape)
            e[idx] = 1.0
            cols.append(conv2d_forward(Tensor(e), k, spec).data.ravel() - zero_out)
        m = np.stack(cols, axis=1)
        gy = rng.uniform(-1, 1, zero_out.shape)
        want = (m.T @ gy).reshape(x_shape)
        got = conv2d_input_grad(Tensor(gy.reshape(6, 6, 2)), k, spec, x_shape).data
        assert np.allclose(got, want, atol=1e-12)

    def test_linear_in_gy(self, rng):
        spec = ConvSpec(1, 1, 1)
        k = Kernel(rng.uniform(-1, 1, (3, 3, 1, 1)), np.zeros(1))
        g1 = rng.uniform(-1, 1, (5, 5, 1))
        g2 = rng.uniform(-1, 1, (5, 5, 1))
        a = conv2d_input_grad(Tensor(g1 + g2), k, spec, (5, 5, 1)).data
        b = conv2d_input_grad(Tensor(g1), k, spec, (5, 5, 1)).data \
            + conv2d_input_grad(Tensor(g2), k, spec, (5, 5, 1)).data
        assert np.allclose(a, b, atol=1e-12)

    def test_gradient_support_is_dilated_grid(self):
        # one-hot output gradient spreads to the dilation-spaced tap set
        spec = ConvSpec(1, 4, 4)
        w = np.ones((3, 3, 1, 1))
        gy = np.zeros((17, 17, 1))
        gy[8, 8, 0] = 1.0
        g = conv2d_input_grad(Tensor(gy), Kernel(w, np.zeros(1)), spec,
                              (17, 17, 1)).data[:, :, 0]
        support = set(map(tuple, np.argwhere(g != 0)))
        want = {(8 + dr, 8 + dc) for dr in (-4, 0, 4) for dc in (-4, 0, 4)}
        assert support == want


# =========================================================================
# Max pooling
# =========================================================================

class TestMaxPool:
    def test_forward_matches_brute_force(self, rng):
        for _ in range(8):
            x = rng.uniform(-1, 1, (8, 10, 3))
            got, _ = maxpool_forward(Tensor(x))
            assert np.array_equal(got.data, brute_maxpool(x))

    def test_odd_size_rejected(self):
        with pytest.raises(ValueError):
            maxpool_forward(Tensor(np.zeros((5, 4, 1))))

    def test_grad_routes_to_argmax(self, rng):
        x = pool_safe_input(rng, 8, 8, 2)
        out, ctx = maxpool_forward(Tensor(x))
        gy = rng.uniform(-1, 1, out.shape)
        g = maxpool_input_grad(Tensor(gy), ctx).data
        # each window's gradient lands entirely on its max element
        for i in range(4):
            for j in range(4):
                for c in range(2):
                    win = x[2 * i:2 * i + 2, 2 * j:2 * j + 2, c]
                    gwin = g[2 * i:2 * i + 2, 2 * j:2 * j + 2, c]
                    flat = np.argmax(win)
                    assert gwin.ravel()[flat] == gy[i, j, c]
                    assert np.count_nonzero(gwin) <= 1

    def test_grad_matches_finite_differences(self, rng):
        x = pool_safe_input(rng, 6, 6, 2)
        out, ctx = maxpool_forward(Tensor(x))
        gy = rng.uniform(-1, 1, out.shape)
        got = maxpool_input_grad(Tensor(gy), ctx).data

        def objective(arr):
            return float(np.sum(maxpool_forward(Tensor(arr))[0].data * gy))

        want = fd_gradient(objective, x)
        assert max_rel_err(got, want) < 1e-6

    def test_tie_breaks_to_first_row_major(self):
        # equal window entries: the earliest flat index wins, frozen behavior
        x = np.full((2, 2, 1), 0.7)
        out, ctx = maxpool_forward(Tensor(x))
        assert out.data[0, 0, 0] == 0.7
        g = maxpool_input_grad(Tensor(np.ones((1, 1, 1))), ctx).data
        assert g[0, 0, 0] == 1.0
        assert g.sum() == 1.0


# =========================================================================
# Bilinear resize
# =========================================================================

class TestBilinear:
    def test_frozen_1x2_to_1x4(self):
        # hand-computed half-pixel interpolation of [0, 1]
        x = np.array([[[0.0], [1.0]]])
        got = bilinear_upsample_forward(Tensor(x), 1, 4).data[0, :, 0]
        assert np.allclose(got, [0.0, 0.25, 0.75, 1.0], atol=1e-12)

    def test_identity_when_same_size(self, rng):
        x = rng.uniform(-1, 1, (5, 7, 2))
        got = bilinear_upsample_forward(Tensor(x), 5, 7).data
        assert np.allclose(got, x, atol=1e-12)

    def test_constant_preserved(self):
        x = np.full((3, 3, 2), 0.4)
        got = bilinear_upsample_forward(Tensor(x), 12, 9).data
        assert np.allclose(got, 0.4, atol=1e-12)

    def test_values_within_input_range(self, rng):
        x = rng.uniform(-1, 1, (4, 4, 1))
        got = bilinear_upsample_forward(Tensor(x), 13, 11).data
        assert got.min() >= x.min() - 1e-12
        assert got.max() <= x.max() + 1e-12

    def test_shrink_rejected(self):
        with pytest.raises(ValueError):
            bilinear_upsample_forward(Tensor(np.zeros((4, 4, 1))), 2, 4)

    def test_grad_matches_finite_differences(self, rng):
        x = rng.uniform(-1, 1, (3, 4, 2))
        gy = rng.uniform(-1, 1, (7, 9, 2))
        got = bilinear_upsample_input_grad(Tensor(gy), (3, 4, 2)).data

        def objective(arr):
            return float(np.sum(
                bilinear_upsample_forward(Tensor(arr), 7, 9).data * gy))

        want = fd_gradient(objective, x)
        assert max_rel_err(got, want) < 1e-6

    def test_grad_preserves_mass(self, rng):
        # interpolation rows sum to 1, so the transpose conserves totals
        gy = rng.uniform(-1, 1, (11, 13, 3))
        g = bilinear_upsample_input_grad(Tensor(gy), (4, 5, 3)).data
        for c in range(3):
            assert np.isclose(g[:, :, c].sum(), gy[:, :, c].sum(), atol=1e-9)


# =========================================================================
# ReLU and global average pooling
# =========================================================================

class TestRelu:
    def test_forward(self, rng):
        x = rng.uniform(-1, 1, (5, 5, 2))
        out, _ = relu_forward(Tensor(x))
        assert np.array_equal(out.data, np.maximum(x, 0.0))

    def test_grad_masks_negative_side(self, rng):
        x = relu_safe_input(rng, (6, 6, 2))
        _, ctx = relu_forward(Tensor(x))
        gy = rng.uniform(-1, 1, (6, 6, 2))
        got = relu_input_grad(Tensor(gy), ctx).data
        assert np.array_equal(got, gy * (x > 0))

    def test_grad_matches_finite_differences(self, rng):
        x = relu_safe_input(rng, (5, 5, 1))
        _, ctx = relu_forward(Tensor(x))
        gy = rng.uniform(-1, 1, (5, 5, 1))
        got = relu_input_grad(Tensor(gy), ctx).data

        def objective(arr):
            return float(np.sum(relu_forward(Tensor(arr))[0].data * gy))

        want = fd_gradient(objective, x)
        assert max_rel_err(got, want) < 1e-6

    def test_subgradient_at_zero_is_zero(self):
        x = np.zeros((2, 2, 1))
        _, ctx = relu_forward(Tensor(x))
        g = relu_input_grad(Tensor(np.ones((2, 2, 1))), ctx).data
        assert np.all(g == 0.0)


class TestGlobalAvgPool:
    def test_forward_is_mean(self, rng):
        x = rng.uniform(-1, 1, (6, 9, 3))
        out = global_avgpool_forward(Tensor(x))
        assert out.data.shape == (1, 1, 3)
        assert np.allclose(out.data[0, 0], x.mean(axis=(0, 1)))

    def test_grad_is_uniform_spread(self, rng):
        gy = rng.uniform(-1, 1, (1, 1, 2))
        g = global_avgpool_input_grad(Tensor(gy), (4, 5, 2)).data
        assert np.allclose(g, np.broadcast_to(gy / 20.0, (4, 5, 2)))

    def test_grad_matches_finite_differences(self, rng):
        x = rng.uniform(-1, 1, (3, 4, 2))
        gy = rng.uniform(-1, 1, (1, 1, 2))
        got = global_avgpool_input_grad(Tensor(gy), (3, 4, 2)).data

        def objective(arr):
            return float(np.sum(global_avgpool_forward(Tensor(arr)).data * gy))

        want = fd_gradient(objective, x)
        assert max_rel_err(got, want) < 1e-6


# =========================================================================
# Composition: the stacked-dilation identity
# =========================================================================

class TestStackedDilation:
    def test_two_3x3_support_equals_one_5x5(self):
        # two chained dilation-r 3x3 convs reach the same tap set as a
        # single dilation-r 5x5: offsets {-2r, -r, 0, r, 2r} per axis
        r = 6
        spec3 = ConvSpec(1, r, same_padding(3, r))
        spec5 = ConvSpec(1, r, same_padding(5, r))
        k1 = Kernel.random(3, 3, 1, 1, seed=1, scale=1.0)
        k2 = Kernel.random(3, 3, 1, 1, seed=2, scale=1.0)
        k5 = Kernel.random(5, 5, 1, 1, seed=3, scale=1.0)
        gy = np.zeros((32, 32, 1))
        gy[15, 16, 0] = 1.0
        mid = conv2d_input_grad(Tensor(gy), k2, spec3, (32, 32, 1))
        stacked = conv2d_input_grad(mid, k1, spec3, (32, 32, 1)).data[:, :, 0]
        single = conv2d_input_grad(Tensor(gy), k5, spec5, (32, 32, 1)).data[:, :, 0]
        s_stack = set(map(tuple, np.argwhere(stacked != 0)))
        s_single = set(map(tuple, np.argwhere(single != 0)))
        assert s_stack == s_single
        offsets = {(p[0] - 15, p[1] - 16) for p in s_stack}
        want = {(dr, dc) for dr in (-12, -6, 0, 6, 12) for dc in (-12, -6, 0, 6, 12)}
        assert offsets == want
