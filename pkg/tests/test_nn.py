"""Convolutions, normalisation, resampling, pooling and concatenation."""

import numpy as np
import pytest

from src.core.errors import ShapeError
from src.core.gradcheck import finite_diff_check
from src.core.nn import (
    ConvSpec,
    concat_channels,
    conv2d,
    depthwise_separable,
    global_avg_pool,
    l2_normalize,
    layernorm_channels,
    resize_bilinear,
)
from src.core.tensor import Tape, Tensor, narrow, reduce_sum
from tests.oracles import naive_bilinear, naive_conv


def f64(values) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64))


class TestConvSpec:
    def test_depthwise_flag(self):
        assert ConvSpec(4, 4, 3, groups=4).depthwise
        assert not ConvSpec(4, 8, 3, groups=4).depthwise

    def test_group_divisibility(self):
        with pytest.raises(ShapeError):
            ConvSpec(3, 4, 3, groups=2)

    def test_same_padding(self):
        assert ConvSpec.same(2, 2, 3).padding == 1
        assert ConvSpec.same(2, 2, 1).padding == 0

    def test_param_count(self):
        assert ConvSpec.same(3, 8, 3).param_count == 8 * 3 * 9 + 8
        assert ConvSpec.same(8, 8, 3, groups=8, has_bias=False).param_count == 8 * 9


class TestConv2d:
    def test_identity_pointwise(self, rng):
        x = f64(rng.normal(size=(1, 3, 4, 5)))
        weight = f64(np.eye(3).reshape(3, 3, 1, 1))
        out = conv2d(x, ConvSpec(3, 3, 1, has_bias=False), weight)
        assert np.array_equal(out.data, x.data)

    def test_box_sum_interior(self):
        c = 0.25
        x = f64(np.full((1, 1, 5, 5), c))
        out = conv2d(x, ConvSpec.same(1, 1, 3, has_bias=False), f64(np.ones((1, 1, 3, 3))))
        assert np.allclose(out.data[0, 0, 1:-1, 1:-1], 9 * c)
        assert out.data[0, 0, 0, 0] == pytest.approx(4 * c)

    @pytest.mark.parametrize(
        "spec",
        [
            ConvSpec(2, 3, 3, stride=1, padding=1),
            ConvSpec(2, 4, 3, stride=2, padding=0),
            ConvSpec(4, 4, 3, stride=1, padding=1, groups=4),
            ConvSpec(4, 6, 1, groups=2, has_bias=False),
            ConvSpec(2, 2, 5, stride=1, padding=2),
        ],
        ids=["dense", "strided", "depthwise", "grouped", "k5"],
    )
    def test_matches_naive_loops(self, spec, rng):
        x = rng.normal(size=(2, spec.in_channels, 5, 5))
        weight = rng.normal(size=spec.weight_shape)
        bias = rng.normal(size=spec.out_channels) if spec.has_bias else None
        out = conv2d(f64(x), spec, f64(weight), None if bias is None else f64(bias))
        expected = naive_conv(x, weight, bias, spec.stride, spec.padding, spec.groups)
        assert np.allclose(out.data, expected, rtol=1e-5, atol=1e-10)

    def test_same_padding_preserves_extents(self, rng):
        x = f64(rng.normal(size=(1, 2, 6, 8)))
        spec = ConvSpec.same(2, 5, 3)
        out = conv2d(x, spec, f64(rng.normal(size=spec.weight_shape)), f64(np.zeros(5)))
        assert out.shape == (1, 5, 6, 8)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv2d(f64(np.ones((1, 2, 4, 4))), ConvSpec(3, 3, 1, has_bias=False), f64(np.ones((3, 3, 1, 1))))

    def test_output_extent_must_be_positive(self):
        with pytest.raises(ShapeError):
            conv2d(f64(np.ones((1, 1, 2, 2))), ConvSpec(1, 1, 3, has_bias=False), f64(np.ones((1, 1, 3, 3))))

    def test_missing_bias(self):
        with pytest.raises(ShapeError):
            conv2d(f64(np.ones((1, 1, 4, 4))), ConvSpec.same(1, 1, 3), f64(np.ones((1, 1, 3, 3))))

    def test_gradients(self, rng):
        spec = ConvSpec(2, 4, 3, stride=1, padding=1, groups=2)
        x = f64(rng.normal(size=(1, 2, 5, 5)))
        weight = f64(rng.normal(size=spec.weight_shape))
        bias = f64(rng.normal(size=4))
        probe = f64(rng.normal(size=(1, 4, 5, 5)))

        assert finite_diff_check(lambda t: reduce_sum(conv2d(t, spec, weight, bias) * probe), x) < 1e-6
        assert finite_diff_check(lambda t: reduce_sum(conv2d(x, spec, t, bias) * probe), weight) < 1e-6
        assert finite_diff_check(lambda t: reduce_sum(conv2d(x, spec, weight, t) * probe), bias) < 1e-6


class TestDepthwiseSeparable:
    def test_equals_two_stage_reference(self, rng):
        x = f64(rng.normal(size=(1, 3, 6, 6)))
        dw, pw = f64(rng.normal(size=(3, 1, 3, 3))), f64(rng.normal(size=(5, 3, 1, 1)))
        dw_b, pw_b = f64(rng.normal(size=3)), f64(rng.normal(size=5))
        out = depthwise_separable(x, dw, pw, dw_b, pw_b)
        stage = conv2d(x, ConvSpec.same(3, 3, 3, groups=3), dw, dw_b)
        expected = conv2d(stage, ConvSpec.same(3, 5, 1), pw, pw_b)
        assert np.array_equal(out.data, expected.data)

    def test_matches_naive_loops(self, rng):
        x = rng.normal(size=(1, 3, 5, 5))
        dw, pw = rng.normal(size=(3, 1, 3, 3)), rng.normal(size=(4, 3, 1, 1))
        out = depthwise_separable(f64(x), f64(dw), f64(pw))
        expected = naive_conv(naive_conv(x, dw, None, 1, 1, 3), pw, None, 1, 0, 1)
        assert np.allclose(out.data, expected, rtol=1e-5, atol=1e-10)

    @pytest.mark.parametrize("c, c_out", [(4, 2), (8, 8), (32, 32)])
    def test_fewer_parameters_than_dense(self, c, c_out):
        separable = ConvSpec.same(c, c, 3, groups=c).param_count + ConvSpec.same(c, c_out, 1).param_count
        assert separable < ConvSpec.same(c, c_out, 3).param_count


class TestL2Normalize:
    def test_pythagorean(self):
        out = l2_normalize(f64([3.0, 4.0]), eps=1e-12)
        assert out.data.tolist() == pytest.approx([0.6, 0.8])

    def test_zero_vector(self):
        out = l2_normalize(f64([0.0, 0.0, 0.0]))
        assert out.data.tolist() == [0, 0, 0]

    def test_random_norm(self, rng):
        out = l2_normalize(f64(rng.normal(size=(4, 16))), axis=-1).data
        norms = np.linalg.norm(out, axis=-1)
        assert np.all((norms >= 1 - 1e-4) & (norms <= 1))

    def test_gradient(self, rng):
        probe = f64(rng.normal(size=(3, 5)))
        x = f64(rng.normal(size=(3, 5)))
        assert finite_diff_check(lambda t: reduce_sum(l2_normalize(t, axis=-1) * probe), x) < 1e-6


class TestLayerNorm:
    def test_constant_input(self):
        out = layernorm_channels(f64(np.full((1, 4, 2, 2), 3.0)), f64(np.ones(4)), f64(np.zeros(4)))
        assert np.allclose(out.data, 0.0)

    def test_zero_channel_mean(self, rng):
        out = layernorm_channels(f64(rng.normal(size=(2, 5, 3, 3))), f64(rng.uniform(1, 2, 5)), f64(np.zeros(5)))
        assert np.allclose(out.data.mean(axis=1), 0.0, atol=1e-5)

    def test_matches_two_pass_oracle(self, rng):
        x = rng.normal(size=(1, 6, 3, 4))
        gain, offset = rng.normal(size=6), rng.normal(size=6)
        eps = 1e-5
        expected = np.zeros_like(x)
        for i in range(3):
            for j in range(4):
                column = x[0, :, i, j]
                mean = sum(column) / 6
                variance = sum((v - mean) ** 2 for v in column) / 6
                expected[0, :, i, j] = (column - mean) / np.sqrt(variance + eps) * gain + offset
        out = layernorm_channels(f64(x), f64(gain), f64(offset), eps)
        assert np.allclose(out.data, expected, rtol=1e-5, atol=1e-10)

    def test_gradient(self, rng):
        gain, offset = f64(rng.normal(size=4)), f64(rng.normal(size=4))
        probe = f64(rng.normal(size=(1, 4, 2, 3)))
        x = f64(rng.normal(size=(1, 4, 2, 3)))
        assert finite_diff_check(lambda t: reduce_sum(layernorm_channels(t, gain, offset) * probe), x) < 1e-5


class TestResize:
    @pytest.mark.parametrize("scale", [0.5, 2.0])
    def test_constant_stays_constant(self, scale):
        out = resize_bilinear(f64(np.full((1, 2, 4, 6), 0.7)), scale)
        assert np.allclose(out.data, 0.7)

    def test_shapes(self):
        x = f64(np.zeros((1, 1, 4, 6)))
        assert resize_bilinear(x, 0.5).shape == (1, 1, 2, 3)
        assert resize_bilinear(x, 2.0).shape == (1, 1, 8, 12)

    def test_two_by_two_down_is_average(self):
        x = f64([[[[0.1, 0.2], [0.3, 0.8]]]])
        assert resize_bilinear(x, 0.5).data.item() == pytest.approx(0.35)

    def test_ramp_round_trip_interior(self):
        h, w = 8, 8
        ramp = np.add.outer(np.arange(h) * 0.1, np.arange(w) * 0.05)[None, None]
        out = resize_bilinear(resize_bilinear(f64(ramp), 0.5), 2.0).data
        assert np.allclose(out[..., 1:-1, 1:-1], ramp[..., 1:-1, 1:-1], atol=1e-5)

    @pytest.mark.parametrize("scale, size", [(0.5, (6, 4)), (2.0, (3, 5))])
    def test_matches_sampling_formula(self, scale, size, rng):
        x = rng.normal(size=(1, 2, *size))
        out = resize_bilinear(f64(x), scale).data
        expected = naive_bilinear(x, int(size[0] * scale), int(size[1] * scale))
        assert np.allclose(out, expected, rtol=1e-5, atol=1e-12)

    def test_odd_extent_downsample(self):
        with pytest.raises(ShapeError):
            resize_bilinear(f64(np.zeros((1, 1, 5, 4))), 0.5)

    def test_unsupported_scale(self):
        with pytest.raises(ShapeError):
            resize_bilinear(f64(np.zeros((1, 1, 4, 4))), 3.0)

    @pytest.mark.parametrize("scale", [0.5, 2.0])
    def test_gradient(self, scale, rng):
        x = f64(rng.normal(size=(1, 2, 4, 4)))
        probe = f64(rng.normal(size=resize_bilinear(x, scale).shape))
        assert finite_diff_check(lambda t: reduce_sum(resize_bilinear(t, scale) * probe), x) < 1e-6


class TestPoolingAndConcat:
    def test_constant_channels(self):
        x = f64(np.stack([np.full((3, 3), 0.2), np.full((3, 3), 0.9)])[None])
        assert global_avg_pool(x).data.reshape(-1).tolist() == pytest.approx([0.2, 0.9])

    def test_checkerboard(self):
        board = (np.indices((4, 4)).sum(axis=0) % 2).astype(float)
        assert global_avg_pool(f64(board[None, None])).data.item() == 0.5

    def test_pool_matches_loop(self, rng):
        x = rng.normal(size=(2, 3, 4, 5))
        expected = [[sum(x[b, c].reshape(-1)) / 20 for c in range(3)] for b in range(2)]
        assert np.allclose(global_avg_pool(f64(x)).data[..., 0, 0], expected)

    def test_pool_gradient_is_uniform(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 3, 3)), requires_grad=True)
        with Tape() as tape:
            root = reduce_sum(global_avg_pool(x))
        tape.backward(root)
        assert np.allclose(x.grad, 1 / 9)

    def test_concat_and_slice_back(self, rng):
        x = f64(rng.normal(size=(1, 2, 4, 4)))
        joined = concat_channels(x, f64(np.zeros((1, 3, 4, 4))))
        assert joined.shape == (1, 5, 4, 4)
        assert np.array_equal(narrow(joined, 1, 0, 2).data, x.data)

    def test_concat_spatial_mismatch(self):
        with pytest.raises(ShapeError):
            concat_channels(f64(np.zeros((1, 2, 4, 4))), f64(np.zeros((1, 2, 4, 5))))

    def test_concat_gradient_per_input(self, rng):
        a = f64(rng.normal(size=(1, 2, 3, 3)))
        b = f64(rng.normal(size=(1, 1, 3, 3)))
        probe = f64(rng.normal(size=(1, 3, 3, 3)))
        assert finite_diff_check(lambda t: reduce_sum(concat_channels(t, b) * probe), a) < 1e-6
        assert finite_diff_check(lambda t: reduce_sum(concat_channels(a, t) * probe), b) < 1e-6
