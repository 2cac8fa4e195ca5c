# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled 2-D convolution kernels (forward + both gradients).

All partial sums are carried in double precision scratch buffers and cast
to the array dtype once at the end, and every loop nest runs in a fixed
order, so results are bitwise reproducible run to run.

Stride-1 calls (the only stride the network uses) take fast paths that
process four channels per pass so each image-row load is amortized
across four independent fused-multiply-add streams.
"""

cimport cython
from libc.stdlib cimport malloc, free
from libc.string cimport memset

ctypedef fused floating:
    float
    double

DEF COB = 4  # channel block


cdef inline Py_ssize_t imax(Py_ssize_t a, Py_ssize_t b) nogil:
    return a if a > b else b


cdef inline Py_ssize_t imin(Py_ssize_t a, Py_ssize_t b) nogil:
    return a if a < b else b


cdef inline Py_ssize_t ceil_div(Py_ssize_t a, Py_ssize_t b) nogil:
    # ceil(a / b) for b > 0 and any a; beware cdivision truncates toward zero
    if a > 0:
        return (a + b - 1) // b
    return -((-a) // b)


def conv2d_forward_typed(floating[:, :, ::1] x, floating[:, :, :, ::1] w,
                         floating[::1] b, int stride, int pad,
                         floating[:, :, ::1] out):
    cdef Py_ssize_t cin = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = out.shape[1], ow = out.shape[2]
    cdef Py_ssize_t co0, nb, cb, ci, oy, ox, ky, kx, iy, base, lo, hi
    cdef double w0, w1, w2, w3, xv
    cdef const floating* xrow
    cdef double* a0
    cdef double* a1
    cdef double* a2
    cdef double* a3
    cdef double* acc = <double*> malloc(COB * ow * sizeof(double))
    if acc == NULL:
        raise MemoryError()
    try:
        for co0 in range(0, cout, COB):
            nb = imin(COB, cout - co0)
            for oy in range(oh):
                for cb in range(nb):
                    for ox in range(ow):
                        acc[cb * ow + ox] = <double>b[co0 + cb]
                a0 = acc
                a1 = acc + ow
                a2 = acc + 2 * ow
                a3 = acc + 3 * ow
                for ci in range(cin):
                    for ky in range(kh):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        xrow = &x[ci, iy, 0]
                        for kx in range(kw):
                            lo = imax(0, ceil_div(pad - kx, stride))
                            hi = imin(ow, ceil_div(wd - kx + pad, stride))
                            base = kx - pad
                            if stride == 1 and nb == COB:
                                w0 = <double>w[co0, ci, ky, kx]
                                w1 = <double>w[co0 + 1, ci, ky, kx]
                                w2 = <double>w[co0 + 2, ci, ky, kx]
                                w3 = <double>w[co0 + 3, ci, ky, kx]
                                for ox in range(lo, hi):
                                    xv = <double>xrow[ox + base]
                                    a0[ox] += w0 * xv
                                    a1[ox] += w1 * xv
                                    a2[ox] += w2 * xv
                                    a3[ox] += w3 * xv
                            else:
                                for cb in range(nb):
                                    w0 = <double>w[co0 + cb, ci, ky, kx]
                                    for ox in range(lo, hi):
                                        acc[cb * ow + ox] += w0 * <double>xrow[ox * stride + base]
                for cb in range(nb):
                    for ox in range(ow):
                        out[co0 + cb, oy, ox] = <floating>acc[cb * ow + ox]
    finally:
        free(acc)


def conv2d_grad_input_typed(floating[:, :, ::1] gout, floating[:, :, :, ::1] w,
                            int stride, int pad, floating[:, :, ::1] gx):
    cdef Py_ssize_t cin = gx.shape[0], h = gx.shape[1], wd = gx.shape[2]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = gout.shape[1], ow = gout.shape[2]
    cdef Py_ssize_t co, ci0, nb, cb, oy, ox, ky, kx, iy, base, lo, hi, i
    cdef double w0, w1, w2, w3, gv
    cdef const floating* grow
    cdef double* r0
    cdef double* r1
    cdef double* r2
    cdef double* r3
    cdef Py_ssize_t n = cin * h * wd
    cdef double* acc = <double*> malloc(n * sizeof(double))
    if acc == NULL:
        raise MemoryError()
    try:
        memset(acc, 0, n * sizeof(double))
        for co in range(cout):
            for oy in range(oh):
                grow = &gout[co, oy, 0]
                for ci0 in range(0, cin, COB):
                    nb = imin(COB, cin - ci0)
                    for ky in range(kh):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            lo = imax(0, ceil_div(pad - kx, stride))
                            hi = imin(ow, ceil_div(wd - kx + pad, stride))
                            base = iy * wd + kx - pad
                            if stride == 1 and nb == COB:
                                w0 = <double>w[co, ci0, ky, kx]
                                w1 = <double>w[co, ci0 + 1, ky, kx]
                                w2 = <double>w[co, ci0 + 2, ky, kx]
                                w3 = <double>w[co, ci0 + 3, ky, kx]
                                r0 = acc + ci0 * h * wd + base
                                r1 = acc + (ci0 + 1) * h * wd + base
                                r2 = acc + (ci0 + 2) * h * wd + base
                                r3 = acc + (ci0 + 3) * h * wd + base
                                for ox in range(lo, hi):
                                    gv = <double>grow[ox]
                                    r0[ox] += w0 * gv
                                    r1[ox] += w1 * gv
                                    r2[ox] += w2 * gv
                                    r3[ox] += w3 * gv
                            else:
                                for cb in range(nb):
                                    w0 = <double>w[co, ci0 + cb, ky, kx]
                                    r0 = acc + (ci0 + cb) * h * wd + base
                                    for ox in range(lo, hi):
                                        r0[ox * stride] += w0 * <double>grow[ox]
        i = 0
        for ci0 in range(cin):
            for iy in range(h):
                for ox in range(wd):
                    gx[ci0, iy, ox] = <floating>acc[i]
                    i += 1
    finally:
        free(acc)


def conv2d_grad_weight_typed(floating[:, :, ::1] gout, floating[:, :, ::1] x,
                             int stride, int pad, floating[:, :, :, ::1] gw):
    cdef Py_ssize_t cin = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t cout = gw.shape[0], kh = gw.shape[2], kw = gw.shape[3]
    cdef Py_ssize_t oh = gout.shape[1], ow = gout.shape[2]
    cdef Py_ssize_t co0, nb, cb, ci, oy, ox, ky, kx, iy, base, lo, hi, i
    cdef double s0, s1, s2, s3, xv
    cdef const floating* xrow
    cdef const floating* g0
    cdef const floating* g1
    cdef const floating* g2
    cdef const floating* g3
    cdef Py_ssize_t n = cout * cin * kh * kw
    cdef double* acc = <double*> malloc(n * sizeof(double))
    if acc == NULL:
        raise MemoryError()
    try:
        memset(acc, 0, n * sizeof(double))
        for co0 in range(0, cout, COB):
            nb = imin(COB, cout - co0)
            for oy in range(oh):
                g0 = &gout[co0, oy, 0]
                g1 = &gout[imin(co0 + 1, cout - 1), oy, 0]
                g2 = &gout[imin(co0 + 2, cout - 1), oy, 0]
                g3 = &gout[imin(co0 + 3, cout - 1), oy, 0]
                for ci in range(cin):
                    for ky in range(kh):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        xrow = &x[ci, iy, 0]
                        for kx in range(kw):
                            lo = imax(0, ceil_div(pad - kx, stride))
                            hi = imin(ow, ceil_div(wd - kx + pad, stride))
                            base = kx - pad
                            if stride == 1 and nb == COB:
                                s0 = s1 = s2 = s3 = 0.0
                                for ox in range(lo, hi):
                                    xv = <double>xrow[ox + base]
                                    s0 += xv * <double>g0[ox]
                                    s1 += xv * <double>g1[ox]
                                    s2 += xv * <double>g2[ox]
                                    s3 += xv * <double>g3[ox]
                                acc[((co0 * cin + ci) * kh + ky) * kw + kx] += s0
                                acc[(((co0 + 1) * cin + ci) * kh + ky) * kw + kx] += s1
                                acc[(((co0 + 2) * cin + ci) * kh + ky) * kw + kx] += s2
                                acc[(((co0 + 3) * cin + ci) * kh + ky) * kw + kx] += s3
                            else:
                                for cb in range(nb):
                                    s0 = 0.0
                                    for ox in range(lo, hi):
                                        s0 += <double>x[ci, iy, ox * stride + base] * <double>gout[co0 + cb, oy, ox]
                                    acc[(((co0 + cb) * cin + ci) * kh + ky) * kw + kx] += s0
        i = 0
        for co0 in range(cout):
            for ci in range(cin):
                for ky in range(kh):
                    for kx in range(kw):
                        gw[co0, ci, ky, kx] = <floating>acc[i]
                        i += 1
    finally:
        free(acc)
