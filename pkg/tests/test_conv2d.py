"""Convolution against the quadruple-loop oracle, plus backend agreement."""

import numpy as np
import pytest

from boxprompt import kernels, ops
from boxprompt.kernels import conv_numpy
from boxprompt.tensor import Tensor


def naive_conv2d(x, w, b, stride, pad):
    """Four-nested-loop cross-correlation, float64 throughout."""
    cout, cin, kh, kw = w.shape
    _, h, wd = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((cout, oh, ow), dtype=np.float64)
    for co in range(cout):
        for oy in range(oh):
            for ox in range(ow):
                acc = float(b[co])
                for ci in range(cin):
                    for ky in range(kh):
                        for kx in range(kw):
                            iy = oy * stride + ky - pad
                            ix = ox * stride + kx - pad
                            if 0 <= iy < h and 0 <= ix < wd:
                                acc += float(w[co, ci, ky, kx]) * float(x[ci, iy, ix])
                out[co, oy, ox] = acc
    return out


def run_conv(x, w, b, stride, pad, dtype):
    out = ops.conv2d(Tensor(x, dtype), Tensor(w, dtype), Tensor(b, dtype),
                     stride=stride, padding=pad)
    return out.data


def random_cases(seed, n):
    """Random (shape, stride, pad) combos up to 4x8x8 with exact output extents."""
    rng = np.random.default_rng(seed)
    cases = []
    while len(cases) < n:
        cin = int(rng.integers(1, 5))
        cout = int(rng.integers(1, 5))
        h = int(rng.integers(1, 9))
        w = int(rng.integers(1, 9))
        k = int(rng.choice([1, 3, 5]))
        stride = int(rng.integers(1, 4))
        pad = int(rng.integers(0, 3))
        if h + 2 * pad < k or w + 2 * pad < k:
            continue
        if (h + 2 * pad - k) % stride or (w + 2 * pad - k) % stride:
            continue
        x = rng.standard_normal((cin, h, w))
        wt = rng.standard_normal((cout, cin, k, k))
        b = rng.standard_normal(cout)
        cases.append((x, wt, b, stride, pad))
    return cases


class TestConvForward:
    def test_box_filter_counting(self):
        x = np.ones((1, 3, 3))
        w = np.ones((1, 1, 3, 3))
        out = run_conv(x, w, np.zeros(1), 1, 1, np.float32)
        assert out[0, 1, 1] == 9.0
        for cy, cx in [(0, 0), (0, 2), (2, 0), (2, 2)]:
            assert out[0, cy, cx] == 4.0

    def test_1x1_identity(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 4, 4)).astype(np.float32)
        w = np.ones((1, 1, 1, 1), dtype=np.float32)
        out = run_conv(x, w, np.zeros(1), 1, 0, np.float32)
        assert np.array_equal(out, x)

    def test_random_case_vs_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        out = run_conv(x, w, b, 1, 1, np.float64)
        assert np.abs(out - naive_conv2d(x, w, b, 1, 1)).max() < 1e-6

    @pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-6), (np.float64, 1e-12)])
    def test_oracle_sweep_small_shapes(self, dtype, tol):
        for x, w, b, stride, pad in random_cases(11, 40):
            got = run_conv(x.astype(dtype), w.astype(dtype), b.astype(dtype), stride, pad, dtype)
            ref = naive_conv2d(x.astype(dtype), w.astype(dtype), b.astype(dtype), stride, pad)
            assert np.abs(got - ref).max() < tol, (x.shape, w.shape, stride, pad)

    def test_forward_bitwise_deterministic(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((4, 8, 8)).astype(np.float32)
        w = rng.standard_normal((4, 4, 3, 3)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        a = run_conv(x, w, b, 1, 1, np.float32)
        c = run_conv(x, w, b, 1, 1, np.float32)
        assert np.array_equal(a, c)


class TestConvErrors:
    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            run_conv(np.ones((1, 4, 4)), np.ones((1, 1, 2, 2)), np.zeros(1), 1, 0, np.float32)

    def test_non_exact_extent_rejected(self):
        # (4 + 0 - 3) = 1 not divisible by stride 2
        with pytest.raises(ValueError, match="non-exact"):
            run_conv(np.ones((1, 4, 4)), np.ones((1, 1, 3, 3)), np.zeros(1), 2, 0, np.float32)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError):
            run_conv(np.ones((2, 4, 4)), np.ones((1, 3, 3, 3)), np.zeros(1), 1, 1, np.float32)

    def test_bias_mismatch_rejected(self):
        with pytest.raises(ValueError):
            run_conv(np.ones((1, 4, 4)), np.ones((2, 1, 3, 3)), np.zeros(3), 1, 1, np.float32)


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")
class TestBackendAgreement:
    """The compiled and numpy kernel paths compute the same maps."""

    def test_forward_agreement(self):
        for x, w, b, stride, pad in random_cases(21, 12):
            for dtype in (np.float32, np.float64):
                xa, wa, ba = x.astype(dtype), w.astype(dtype), b.astype(dtype)
                got_cy = kernels.conv2d_forward(xa, wa, ba, stride, pad)
                got_np = conv_numpy.conv2d_forward(xa, wa, ba, stride, pad)
                tol = 1e-6 if dtype == np.float32 else 1e-12
                assert np.abs(got_cy - got_np).max() < tol

    def test_gradient_agreement(self):
        rng = np.random.default_rng(22)
        for x, w, b, stride, pad in random_cases(23, 8):
            oh = (x.shape[1] + 2 * pad - w.shape[2]) // stride + 1
            ow = (x.shape[2] + 2 * pad - w.shape[3]) // stride + 1
            g = rng.standard_normal((w.shape[0], oh, ow))
            gx_cy = kernels.conv2d_grad_input(g, w, x.shape, stride, pad)
            gx_np = conv_numpy.conv2d_grad_input(g, w, x.shape, stride, pad)
            gw_cy = kernels.conv2d_grad_weight(g, x, w.shape[2], w.shape[3], stride, pad)
            gw_np = conv_numpy.conv2d_grad_weight(g, x, w.shape[2], w.shape[3], stride, pad)
            assert np.abs(gx_cy - gx_np).max() < 1e-12
            assert np.abs(gw_cy - gw_np).max() < 1e-12
