"""Convolution kernel backend selection.

The compiled Cython kernels are preferred; a numpy im2col fallback keeps
the package usable from a plain source tree.  ``BOXPROMPT_KERNELS`` can
force a backend (``cython`` or ``numpy``), which the benchmark script
uses to time both sides on identical workloads.
"""

from __future__ import annotations

import os

import numpy as np

from . import conv_numpy


def _load_compiled():
    try:
        from . import _convkernels
        return _convkernels
    except ImportError:
        return None


_compiled = _load_compiled()
_forced = os.environ.get("BOXPROMPT_KERNELS", "auto").lower()
if _forced == "numpy":
    _compiled = None
elif _forced == "cython" and _compiled is None:
    raise ImportError("BOXPROMPT_KERNELS=cython but the compiled kernels are not built")

BACKEND = "cython" if _compiled is not None else "numpy"


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int) -> np.ndarray:
    if _compiled is None:
        return conv_numpy.conv2d_forward(x, w, b, stride, pad)
    cout, _, kh, kw = w.shape
    _, h, wd = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.empty((cout, oh, ow), dtype=x.dtype)
    _compiled.conv2d_forward_typed(x, w, b, stride, pad, out)
    return out


def conv2d_grad_input(gout: np.ndarray, w: np.ndarray, x_shape, stride: int, pad: int) -> np.ndarray:
    if _compiled is None:
        return conv_numpy.conv2d_grad_input(gout, w, x_shape, stride, pad)
    gx = np.empty(x_shape, dtype=gout.dtype)
    _compiled.conv2d_grad_input_typed(gout, w, stride, pad, gx)
    return gx


def conv2d_grad_weight(gout: np.ndarray, x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    if _compiled is None:
        return conv_numpy.conv2d_grad_weight(gout, x, kh, kw, stride, pad)
    cout = gout.shape[0]
    gw = np.empty((cout, x.shape[0], kh, kw), dtype=gout.dtype)
    _compiled.conv2d_grad_weight_typed(gout, x, stride, pad, gw)
    return gw
