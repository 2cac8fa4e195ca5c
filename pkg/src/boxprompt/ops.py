"""Differentiable operations over :class:`~boxprompt.tensor.Tensor`.

The operation set is exactly what the localization network needs:
convolution, bilinear resizing, elementwise arithmetic, reductions,
softmax, small matrix products, and shape plumbing.  Convolution dispatches
to the compiled/numpy kernel backend; everything else is numpy.

Elementwise binary ops accept identical shapes, or a second operand whose
leading (channel) axis is a singleton — the broadcast used to apply a
one-channel spatial gate across feature channels.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import Tensor


def _as_const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype), dtype=like.dtype)


def _check_binary_shapes(a: Tensor, b: Tensor, op: str) -> bool:
    """Return True when b broadcasts over a's leading axis."""
    if a.shape == b.shape:
        return False
    if len(a.shape) == len(b.shape) and len(b.shape) >= 1 and b.shape[0] == 1 \
            and a.shape[1:] == b.shape[1:]:
        return True
    raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are not compatible "
                     "(need identical shapes or a singleton leading axis on the second operand)")


def _reduce_to(b_shape, g: np.ndarray) -> np.ndarray:
    if g.shape == tuple(b_shape):
        return g.copy()
    return g.sum(axis=0, keepdims=True)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    b = _as_const(b, a)
    _check_binary_shapes(a, b, "add")

    def bw(g):
        return ((a, g), (b, _reduce_to(b.shape, g)))

    return Tensor._from_op(a.data + b.data, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    b = _as_const(b, a)
    _check_binary_shapes(a, b, "sub")

    def bw(g):
        return ((a, g), (b, -_reduce_to(b.shape, g)))

    return Tensor._from_op(a.data - b.data, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product (with the gate broadcast rule)."""
    b = _as_const(b, a)
    _check_binary_shapes(a, b, "hadamard")

    def bw(g):
        return ((a, g * b.data), (b, _reduce_to(b.shape, g * a.data)))

    return Tensor._from_op(a.data * b.data, (a, b), bw, "hadamard")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bw(g):
        return ((a, g * a.dtype.type(s)),)

    return Tensor._from_op(a.data * a.dtype.type(s), (a,), bw, "scale")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def bw(g):
        return ((a, g * y * (1.0 - y)),)

    return Tensor._from_op(y, (a,), bw, "sigmoid")


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x); smooth, and zero at zero."""
    x = a.data
    sig = np.empty_like(x)
    pos = x >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    sig[~pos] = ex / (1.0 + ex)
    y = x * sig

    def bw(g):
        return ((a, g * sig * (1.0 + x * (1.0 - sig))),)

    return Tensor._from_op(y, (a,), bw, "silu")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    lo = a.dtype.type(lo)
    hi = a.dtype.type(hi)
    y = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        return ((a, g * inside),)

    return Tensor._from_op(y, (a,), bw, "clamp")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces as NonFiniteError
        y = np.exp(a.data)

    def bw(g):
        return ((a, g * y),)

    return Tensor._from_op(y, (a,), bw, "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore", divide="ignore"):
        y = np.log(a.data)

    def bw(g):
        return ((a, g / a.data),)

    return Tensor._from_op(y, (a,), bw, "log")


_ELTWISE = {"add": add, "hadamard": mul, "sub": sub, "scale": scale,
            "sigmoid": sigmoid, "clamp": clamp}


def eltwise(kind: str, a: Tensor, b=None, **kw) -> Tensor:
    """Dispatch by kind: add/hadamard/sub take a tensor, scale a scalar,
    sigmoid nothing, clamp lo/hi keywords."""
    if kind not in _ELTWISE:
        raise ValueError(f"unknown eltwise kind '{kind}'")
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "clamp":
        return clamp(a, **kw)
    return _ELTWISE[kind](a, b)


# ---------------------------------------------------------------------------
# reductions and softmax
# ---------------------------------------------------------------------------

def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if isinstance(axes, int):
        axes = [axes]
    axes = tuple(ax % ndim if -ndim <= ax < ndim else ax for ax in axes)
    if len(axes) == 0:
        raise ValueError("reduce: empty axis list")
    if any(ax < 0 or ax >= ndim for ax in axes):
        raise ValueError(f"reduce: axis out of range for ndim={ndim}: {axes}")
    if len(set(axes)) != len(axes):
        raise ValueError(f"reduce: duplicate axes {axes}")
    return tuple(sorted(axes))


def reduce(kind: str, a: Tensor, axes, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, a.data.ndim)
    if any(a.shape[ax] == 0 for ax in axes):
        raise ValueError("reduce: reduction over an empty axis")

    if kind == "sum" or kind == "mean":
        y = a.data.sum(axis=axes, keepdims=keepdims)
        count = 1
        for ax in axes:
            count *= a.shape[ax]
        if kind == "mean":
            y = y / a.dtype.type(count)

        def bw(g):
            gg = g if keepdims else np.expand_dims(g, axes)
            gx = np.broadcast_to(gg, a.shape).astype(a.dtype, copy=True)
            if kind == "mean":
                gx /= a.dtype.type(count)
            return ((a, gx),)

        return Tensor._from_op(np.asarray(y, dtype=a.dtype), (a,), bw, kind)

    if kind == "max":
        nd = a.data.ndim
        tail = tuple(range(nd - len(axes), nd))
        moved = np.moveaxis(a.data, axes, tail)
        lead = moved.shape[:nd - len(axes)]
        flat = np.ascontiguousarray(moved).reshape(lead + (-1,))
        arg = flat.argmax(axis=-1)  # first maximal element: deterministic tie-break
        vals = np.take_along_axis(flat, arg[..., None], -1)[..., 0]

        def bw(g):
            gg = g if keepdims else np.expand_dims(g, axes)
            gl = np.moveaxis(gg, axes, tail).reshape(lead)
            gflat = np.zeros_like(flat)
            np.put_along_axis(gflat, arg[..., None], np.asarray(gl)[..., None], -1)
            gx = np.moveaxis(gflat.reshape(moved.shape), tail, axes)
            return ((a, np.ascontiguousarray(gx)),)

        if keepdims:
            out_shape = tuple(1 if i in axes else s for i, s in enumerate(a.shape))
        else:
            out_shape = tuple(s for i, s in enumerate(a.shape) if i not in axes)
        return Tensor._from_op(vals.reshape(out_shape).astype(a.dtype, copy=False), (a,), bw, "max")

    raise ValueError(f"unknown reduce kind '{kind}'")


def reduce_sum(a: Tensor, axes, keepdims: bool = False) -> Tensor:
    return reduce("sum", a, axes, keepdims)


def reduce_mean(a: Tensor, axes, keepdims: bool = False) -> Tensor:
    return reduce("mean", a, axes, keepdims)


def reduce_max(a: Tensor, axes, keepdims: bool = False) -> Tensor:
    return reduce("max", a, axes, keepdims)


def mean_all(a: Tensor) -> Tensor:
    if a.data.ndim == 0:
        return a
    return reduce("mean", a, list(range(a.data.ndim)))


def sum_all(a: Tensor) -> Tensor:
    if a.data.ndim == 0:
        return a
    return reduce("sum", a, list(range(a.data.ndim)))


def softmax(a: Tensor, axis: int) -> Tensor:
    nd = a.data.ndim
    if not -nd <= axis < nd:
        raise ValueError(f"softmax: axis {axis} out of range for ndim={nd}")
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((a, y * (g - dot)),)

    return Tensor._from_op(y, (a,), bw, "softmax")


# ---------------------------------------------------------------------------
# convolution and resizing
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of a CHW map with OIHW weights plus per-channel bias.

    The output extent (H + 2*padding - kH) / stride + 1 must divide exactly;
    a fractional extent is an error rather than a silent floor.
    """
    if x.data.ndim != 3 or w.data.ndim != 4 or b.data.ndim != 1:
        raise ValueError(f"conv2d: expected CHW input, OIHW weight, O bias; "
                         f"got {x.shape}, {w.shape}, {b.shape}")
    cout, cin, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride={stride} or padding={padding}")
    if x.shape[0] != cin or b.shape[0] != cout:
        raise ValueError(f"conv2d: channel mismatch: input {x.shape}, weight {w.shape}, bias {b.shape}")
    _, h, wd = x.shape
    for name, extent, k in (("height", h, kh), ("width", wd, kw)):
        span = extent + 2 * padding - k
        if span < 0 or span % stride != 0:
            raise ValueError(f"conv2d: non-exact output {name}: ({extent} + 2*{padding} - {k}) "
                             f"not divisible by stride {stride}")

    y = kernels.conv2d_forward(np.ascontiguousarray(x.data), np.ascontiguousarray(w.data),
                               np.ascontiguousarray(b.data), stride, padding)

    def bw(g):
        g = np.ascontiguousarray(g)
        gx = kernels.conv2d_grad_input(g, w.data, x.shape, stride, padding)
        gw = kernels.conv2d_grad_weight(g, np.ascontiguousarray(x.data), kh, kw, stride, padding)
        gb = g.sum(axis=(1, 2))
        return ((x, gx), (w, gw), (b, gb))

    return Tensor._from_op(y, (x, w, b), bw, "conv2d")


def _resize_grid(n_in: int, n_out: int):
    """align-corners-false sampling grid: floor index, next index, fraction."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if x.data.ndim != 3:
        raise ValueError(f"bilinear_resize: expected CHW input, got {x.shape}")
    c, h, w = x.shape
    if h == 0 or w == 0 or c == 0:
        raise ValueError("bilinear_resize: zero-sized input")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_resize: bad output size {out_h}x{out_w}")
    y0, y1, fy = _resize_grid(h, out_h)
    x0, x1, fx = _resize_grid(w, out_w)
    fy = fy.astype(x.dtype)[None, :, None]
    fx = fx.astype(x.dtype)[None, None, :]

    rows = x.data[:, y0, :] * (1 - fy) + x.data[:, y1, :] * fy
    y = rows[:, :, x0] * (1 - fx) + rows[:, :, x1] * fx

    def bw(g):
        grows = np.zeros((c, out_h, w), dtype=x.dtype)
        for j in range(out_w):
            grows[:, :, x0[j]] += g[:, :, j] * (1 - fx[0, 0, j])
            grows[:, :, x1[j]] += g[:, :, j] * fx[0, 0, j]
        gx = np.zeros((c, h, w), dtype=x.dtype)
        for i in range(out_h):
            gx[:, y0[i], :] += grows[:, i, :] * (1 - fy[0, i, 0])
            gx[:, y1[i], :] += grows[:, i, :] * fy[0, i, 0]
        return ((x, gx),)

    return Tensor._from_op(np.ascontiguousarray(y), (x,), bw, "bilinear_resize")


# ---------------------------------------------------------------------------
# linear algebra and shape plumbing
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def bw(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return Tensor._from_op(a.data @ b.data, (a, b), bw, "matmul")


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose2d: expected a matrix, got {a.shape}")

    def bw(g):
        return ((a, np.ascontiguousarray(g.T)),)

    return Tensor._from_op(np.ascontiguousarray(a.data.T), (a,), bw, "transpose2d")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def bw(g):
        return ((a, g.reshape(a.shape)),)

    return Tensor._from_op(a.data.reshape(shape), (a,), bw, "reshape")


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ValueError("concat: no inputs")
    offsets = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bw(g):
        pieces = np.split(g, offsets, axis=axis)
        return tuple((p, piece) for p, piece in zip(parts, pieces))

    return Tensor._from_op(np.concatenate([p.data for p in parts], axis=axis),
                           tuple(parts), bw, "concat")
