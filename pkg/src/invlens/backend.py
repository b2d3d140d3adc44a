"""Kernel backend selection.

The convolution kernels exist twice: a numba @njit version and a pure-numpy
version. By default the numba path is used when numba imports cleanly; set
the environment variable INVLENS_NO_NUMBA=1 to force the numpy fallback
(useful for debugging and for the benchmark in benchmarks/bench_kernels.py).
"""

import os

from . import kernels_numpy

_FORCE_NUMPY = os.environ.get("INVLENS_NO_NUMBA", "") not in ("", "0")

if not _FORCE_NUMPY:
    try:
        from . import kernels_numba as _impl
        BACKEND = "numba"
    except ImportError:
        _impl = kernels_numpy
        BACKEND = "numpy"
else:
    _impl = kernels_numpy
    BACKEND = "numpy"


def backend_name():
    return BACKEND


def conv2d_forward(x, w):
    kernels_numpy._check(x, w)  # shape errors raised eagerly, outside jit code
    return _impl.conv2d_forward(x, w)


def conv2d_grad_input(gy, w, x_shape):
    return _impl.conv2d_grad_input(gy, w, x_shape)


def conv2d_grad_weight(gy, x, w_shape):
    return _impl.conv2d_grad_weight(gy, x, w_shape)
