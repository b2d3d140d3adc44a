"""Pure-numpy convolution kernels (fallback path).

Stride-1, same-padding 2D convolution for odd square kernels (1x1 / 3x3).
Implemented by accumulating shifted slices, which keeps everything in
vectorized numpy calls.
"""

import numpy as np


def _check(x, w):
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4D input/weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    kh, kw = w.shape[2], w.shape[3]
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d supports odd square kernels only, got {kh}x{kw}")


def conv2d_forward(x, w):
    _check(x, w)
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    p = (kh - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    acc = np.zeros((n, h, wd, o))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + h, j:j + wd]
            acc += np.tensordot(patch, w[:, :, i, j], axes=([1], [1]))
    return np.ascontiguousarray(acc.transpose(0, 3, 1, 2))


def conv2d_grad_input(gy, w, x_shape):
    n, c, h, wd = x_shape
    o, _, kh, kw = w.shape
    p = (kh - 1) // 2
    gxp = np.zeros((n, c, h + 2 * p, wd + 2 * p))
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(gy, w[:, :, i, j], axes=([1], [0]))
            gxp[:, :, i:i + h, j:j + wd] += contrib.transpose(0, 3, 1, 2)
    return np.ascontiguousarray(gxp[:, :, p:p + h, p:p + wd])


def conv2d_grad_weight(gy, x, w_shape):
    o, c, kh, kw = w_shape
    n, _, h, wd = x.shape
    p = (kh - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    gw = np.zeros(w_shape)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + h, j:j + wd]
            gw[:, :, i, j] = np.tensordot(gy, patch, axes=([0, 2, 3], [0, 2, 3]))
    return gw
