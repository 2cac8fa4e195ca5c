"""Elementwise, reduce, softmax and resize contracts."""

import numpy as np
import pytest

from boxprompt import ops
from boxprompt.tensor import Tensor, NonFiniteError


def t64(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), dtype=np.float64, requires_grad=grad)


def t32(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float32), dtype=np.float32, requires_grad=grad)


class TestEltwise:
    def test_hadamard_identity(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 4, 4))
        out = ops.mul(t64(x), t64(np.ones((3, 4, 4))))
        assert np.array_equal(out.data, x)

    def test_sigmoid_at_zero(self):
        assert ops.sigmoid(t64([0.0])).data[0] == 0.5

    def test_gate_broadcast_matches_loop(self):
        rng = np.random.default_rng(2)
        feat = rng.standard_normal((3, 2, 2))
        gate = rng.standard_normal((1, 2, 2))
        out = ops.mul(t64(feat), t64(gate))
        expect = np.zeros_like(feat)
        for c in range(3):
            for i in range(2):
                for j in range(2):
                    expect[c, i, j] = feat[c, i, j] * gate[0, i, j]
        assert np.allclose(out.data, expect, atol=0, rtol=0)

    def test_non_broadcastable_shapes_rejected(self):
        with pytest.raises(ValueError):
            ops.add(t64(np.ones((3, 4))), t64(np.ones((4, 3))))
        with pytest.raises(ValueError):
            ops.mul(t64(np.ones((3, 4, 4))), t64(np.ones((2, 4, 4))))

    def test_clamp_bounds_inclusive(self):
        out = ops.clamp(t64([-1.0, 0.25, 2.0]), 0.0, 1.0)
        assert out.data.tolist() == [0.0, 0.25, 1.0]

    def test_scale_and_sub(self):
        x = t64([1.0, 2.0])
        assert ops.scale(x, 2.5).data.tolist() == [2.5, 5.0]
        assert ops.sub(x, t64([0.5, 0.5])).data.tolist() == [0.5, 1.5]

    def test_eltwise_dispatcher(self):
        x = t64([1.0, -1.0])
        assert np.array_equal(ops.eltwise("add", x, t64([1.0, 1.0])).data, [2.0, 0.0])
        assert np.array_equal(ops.eltwise("scale", x, 3.0).data, [3.0, -3.0])
        assert np.allclose(ops.eltwise("sigmoid", x).data, 1 / (1 + np.exp([-1.0, 1.0])))
        assert np.array_equal(ops.eltwise("clamp", x, lo=0.0, hi=0.5).data, [0.5, 0.0])
        with pytest.raises(ValueError):
            ops.eltwise("xor", x, x)

    def test_sigmoid_clamped_for_bce_never_saturates_at_float32(self):
        x = t32(np.array([-1e4, -50.0, 0.0, 50.0, 1e4]))
        p = ops.clamp(ops.sigmoid(x), 1e-7, 1.0 - 1e-7)
        assert p.data.min() > 0.0
        assert p.data.max() < 1.0
        # and log stays finite on both sides
        assert np.all(np.isfinite(np.log(p.data)))
        assert np.all(np.isfinite(np.log1p(-p.data.astype(np.float64))))

    def test_nonfinite_forward_raises(self):
        with pytest.raises(NonFiniteError):
            Tensor([np.inf], dtype=np.float64)
        with pytest.raises(NonFiniteError):
            ops.exp(t64([1000.0]))


class TestReduce:
    def test_mean_of_equal_stack(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 4))
        stack = np.stack([x, x, x, x])
        out = ops.reduce_mean(t64(stack), [0])
        assert np.allclose(out.data, x, rtol=0, atol=1e-15)

    def test_sum_all_ones(self):
        assert ops.sum_all(t64(np.ones((2, 3)))).item() == 6.0

    def test_max_one_hot_plane(self):
        plane = np.zeros((1, 5, 7))
        plane[0, 3, 2] = 1.0
        out = ops.reduce_max(t64(plane), [1, 2])
        assert out.data.shape == (1,)
        assert out.data[0] == 1.0

    def test_keepdims_flag(self):
        x = t64(np.arange(12.0).reshape(3, 4))
        assert ops.reduce_sum(x, [1], keepdims=True).shape == (3, 1)
        assert ops.reduce_sum(x, [1], keepdims=False).shape == (3,)

    def test_reductions_bitwise_deterministic(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((7, 11, 13)).astype(np.float32)
        a = ops.reduce_sum(t32(x), [0, 2]).data
        b = ops.reduce_sum(t32(x), [0, 2]).data
        assert np.array_equal(a, b)
        a = ops.reduce_mean(t32(x), [1]).data
        b = ops.reduce_mean(t32(x), [1]).data
        assert np.array_equal(a, b)

    def test_bad_axes_rejected(self):
        x = t64(np.ones((2, 3)))
        with pytest.raises(ValueError):
            ops.reduce_sum(x, [])
        with pytest.raises(ValueError):
            ops.reduce_sum(x, [0, 0])
        with pytest.raises(ValueError):
            ops.reduce_sum(x, [5])

    def test_empty_axis_reduction_rejected(self):
        x = t64(np.ones((0, 3)))
        with pytest.raises(ValueError):
            ops.reduce_mean(x, [0])


class TestSoftmax:
    def test_uniform_input(self):
        out = ops.softmax(t64([2.0, 2.0, 2.0, 2.0]), 0)
        assert np.allclose(out.data, 0.25, rtol=0, atol=1e-15)

    def test_extreme_values_stable(self):
        out = ops.softmax(t64([1000.0, 0.0]), 0)
        assert abs(out.data[0] - 1.0) < 1e-9
        assert abs(out.data[1]) < 1e-9

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(5)
        v = rng.standard_normal(5)
        out = ops.softmax(t64(v), 0)
        expect = np.exp(v) / np.exp(v).sum()
        assert np.allclose(out.data, expect, rtol=0, atol=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(6)
        out = ops.softmax(t32(rng.standard_normal((3, 9))), 1)
        assert np.all(out.data > 0)
        assert np.allclose(out.data.sum(axis=1), 1.0, atol=1e-6)

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            ops.softmax(t64([1.0, 2.0]), 3)


def resize_oracle(x, out_h, out_w):
    """Direct per-pixel evaluation of the align-corners-false formula."""
    c, h, w = x.shape
    out = np.zeros((c, out_h, out_w))
    for oy in range(out_h):
        sy = min(max((oy + 0.5) * h / out_h - 0.5, 0.0), h - 1)
        y0 = min(int(np.floor(sy)), h - 1)
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for ox in range(out_w):
            sx = min(max((ox + 0.5) * w / out_w - 0.5, 0.0), w - 1)
            x0 = min(int(np.floor(sx)), w - 1)
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            for ch in range(c):
                top = x[ch, y0, x0] * (1 - fx) + x[ch, y0, x1] * fx
                bot = x[ch, y1, x0] * (1 - fx) + x[ch, y1, x1] * fx
                out[ch, oy, ox] = top * (1 - fy) + bot * fy
    return out


class TestBilinearResize:
    def test_same_size_is_identity(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 5, 6))
        out = ops.bilinear_resize(t64(x), 5, 6)
        assert np.array_equal(out.data, x)

    def test_constant_stays_constant(self):
        x = np.full((1, 3, 3), 0.37)
        out = ops.bilinear_resize(t64(x), 8, 5)
        assert np.allclose(out.data, 0.37, atol=1e-12)

    def test_2x2_to_4x4_matches_formula_oracle(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        out = ops.bilinear_resize(t64(x), 4, 4)
        assert np.allclose(out.data, resize_oracle(x, 4, 4), atol=1e-12)

    def test_random_shapes_match_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(8):
            c = int(rng.integers(1, 4))
            h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            oh, ow = int(rng.integers(1, 13)), int(rng.integers(1, 13))
            x = rng.standard_normal((c, h, w))
            out = ops.bilinear_resize(t64(x), oh, ow)
            assert np.allclose(out.data, resize_oracle(x, oh, ow), atol=1e-12)

    def test_zero_sized_input_rejected(self):
        with pytest.raises(ValueError):
            ops.bilinear_resize(t64(np.zeros((1, 0, 3))), 4, 4)
        with pytest.raises(ValueError):
            ops.bilinear_resize(t64(np.zeros((1, 3, 3))), 0, 4)
