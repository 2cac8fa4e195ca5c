"""Numpy (im2col) implementation of the 2-D convolution kernels.

Layouts match the compiled backend: input ``(C_in, H, W)``, weight
``(C_out, C_in, kH, kW)``, output ``(C_out, H', W')``.  All partial sums
are accumulated in float64 and cast back to the input dtype, so float32
results land within one ulp of the exact cross-correlation.
"""

from __future__ import annotations

import numpy as np


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Return patches as (C_in*kh*kw, H'*W') in float64."""
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad > 0 else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride, :, :]  # (C, H', W', kh, kw)
    _, oh, ow, _, _ = win.shape
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols, dtype=np.float64)


def conv2d_forward(x, w, b, stride, pad):
    cout, cin, kh, kw = w.shape
    _, h, wd = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    cols = _im2col(x, kh, kw, stride, pad)
    out = w.reshape(cout, -1).astype(np.float64) @ cols
    out += b.astype(np.float64)[:, None]
    return out.reshape(cout, oh, ow).astype(x.dtype)


def conv2d_grad_input(gout, w, x_shape, stride, pad):
    cout, cin, kh, kw = w.shape
    _, h, wd = x_shape
    _, oh, ow = gout.shape
    # col2im: scatter-add each patch column back onto the padded canvas
    cols = w.reshape(cout, -1).astype(np.float64).T @ gout.reshape(cout, -1).astype(np.float64)
    cols = cols.reshape(cin, kh, kw, oh, ow)
    gx = np.zeros((cin, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    oy = np.arange(oh) * stride
    ox = np.arange(ow) * stride
    for ky in range(kh):
        for kx in range(kw):
            gx[:, ky + oy[:, None], kx + ox[None, :]] += cols[:, ky, kx]
    if pad > 0:
        gx = gx[:, pad:h + pad, pad:wd + pad]
    return gx.astype(w.dtype)


def conv2d_grad_weight(gout, x, kh, kw, stride, pad):
    cout, oh, ow = gout.shape
    cin = x.shape[0]
    cols = _im2col(x, kh, kw, stride, pad)
    gw = gout.reshape(cout, -1).astype(np.float64) @ cols.T
    return gw.reshape(cout, cin, kh, kw).astype(x.dtype)
