"""Numba-jitted convolution kernels (hot path).

Same contract as kernels_numpy. The spatial windows are gathered into an
im2col matrix inside the jitted function so the multiply-accumulate runs
as one BLAS matmul instead of scalar loops.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _pad(x, p):
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p))
    xp[:, :, p:p + h, p:p + w] = x
    return xp


@njit(cache=True)
def _im2col(xp, n, c, h, w, kh, kw):
    cols = np.empty((n * h * w, c * kh * kw))
    for nn in range(n):
        for i in range(h):
            for j in range(w):
                r = (nn * h + i) * w + j
                k = 0
                for cc in range(c):
                    for di in range(kh):
                        for dj in range(kw):
                            cols[r, k] = xp[nn, cc, i + di, j + dj]
                            k += 1
    return cols


@njit(cache=True)
def conv2d_forward(x, w):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    p = (kh - 1) // 2
    cols = _im2col(_pad(x, p), n, c, h, wd, kh, kw)
    wm = np.ascontiguousarray(w.reshape(o, c * kh * kw))
    ym = np.dot(cols, wm.T)
    y = np.empty((n, o, h, wd))
    for nn in range(n):
        for i in range(h):
            for j in range(wd):
                r = (nn * h + i) * wd + j
                for oo in range(o):
                    y[nn, oo, i, j] = ym[r, oo]
    return y


@njit(cache=True)
def conv2d_grad_input(gy, w, x_shape):
    n, c, h, wd = x_shape
    o, _, kh, kw = w.shape
    p = (kh - 1) // 2
    gym = np.empty((n * h * wd, o))
    for nn in range(n):
        for i in range(h):
            for j in range(wd):
                r = (nn * h + i) * wd + j
                for oo in range(o):
                    gym[r, oo] = gy[nn, oo, i, j]
    wm = np.ascontiguousarray(w.reshape(o, c * kh * kw))
    gcols = np.dot(gym, wm)
    gxp = np.zeros((n, c, h + 2 * p, wd + 2 * p))
    for nn in range(n):
        for i in range(h):
            for j in range(wd):
                r = (nn * h + i) * wd + j
                k = 0
                for cc in range(c):
                    for di in range(kh):
                        for dj in range(kw):
                            gxp[nn, cc, i + di, j + dj] += gcols[r, k]
                            k += 1
    return gxp[:, :, p:p + h, p:p + wd].copy()


@njit(cache=True)
def conv2d_grad_weight(gy, x, w_shape):
    o, c, kh, kw = w_shape
    n, _, h, wd = x.shape
    p = (kh - 1) // 2
    cols = _im2col(_pad(x, p), n, c, h, wd, kh, kw)
    gym = np.empty((o, n * h * wd))
    for nn in range(n):
        for i in range(h):
            for j in range(wd):
                r = (nn * h + i) * wd + j
                for oo in range(o):
                    gym[oo, r] = gy[nn, oo, i, j]
    return np.dot(gym, cols).reshape(o, c, kh, kw)
