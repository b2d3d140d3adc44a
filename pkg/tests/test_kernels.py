"""Conv kernel backends: numba and pure-numpy must agree to float precision."""

import numpy as np
import pytest

from invlens import backend, kernels_numpy

try:
    from invlens import kernels_numba
    HAVE_NUMBA = True
except ImportError:
    kernels_numba = None
    HAVE_NUMBA = False

CASES = [
    (1, 1, 4, 4, 1, 1),   # 1x1 kernel
    (2, 3, 5, 5, 4, 3),   # 3x3 kernel
    (3, 4, 7, 7, 2, 3),
    (2, 8, 6, 6, 8, 3),
]


def _instance(n, ci, h, w, co, k, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, ci, h, w))
    wt = rng.standard_normal((co, ci, k, k)) * 0.5
    gy = rng.standard_normal((n, co, h, w))
    return x, wt, gy


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("case", CASES, ids=str)
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(case, seed):
    n, ci, h, w, co, k = case
    x, wt, gy = _instance(n, ci, h, w, co, k, seed)
    for name in ("conv2d_forward",):
        a = getattr(kernels_numpy, name)(x, wt)
        b = getattr(kernels_numba, name)(x, wt)
        assert np.allclose(a, b, atol=1e-12), name
    gi_np = kernels_numpy.conv2d_grad_input(gy, wt, x.shape)
    gi_nb = kernels_numba.conv2d_grad_input(gy, wt, x.shape)
    assert np.allclose(gi_np, gi_nb, atol=1e-12)
    gw_np = kernels_numpy.conv2d_grad_weight(gy, x, wt.shape)
    gw_nb = kernels_numba.conv2d_grad_weight(gy, x, wt.shape)
    assert np.allclose(gw_np, gw_nb, atol=1e-12)


def test_forward_matches_dense_reference():
    # brute-force same-padding convolution as an independent oracle
    n, ci, h, w, co, k = 2, 2, 5, 5, 3, 3
    x, wt, _ = _instance(n, ci, h, w, co, k, 99)
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ref = np.zeros((n, co, h, w))
    for b in range(n):
        for o in range(co):
            for i in range(h):
                for j in range(w):
                    ref[b, o, i, j] = np.sum(
                        xp[b, :, i:i + k, j:j + k] * wt[o])
    got = backend.conv2d_forward(x, wt)
    assert np.allclose(got, ref, atol=1e-10)


def test_grad_input_is_adjoint_of_forward():
    # <conv(x), gy> == <x, conv_grad_input(gy)> for all x, gy (linearity)
    n, ci, h, w, co, k = 2, 3, 6, 6, 4, 3
    x, wt, gy = _instance(n, ci, h, w, co, k, 7)
    lhs = np.sum(backend.conv2d_forward(x, wt) * gy)
    rhs = np.sum(x * backend.conv2d_grad_input(gy, wt, x.shape))
    assert abs(lhs - rhs) < 1e-9


def test_grad_weight_is_adjoint_in_weights():
    n, ci, h, w, co, k = 2, 3, 6, 6, 4, 3
    x, wt, gy = _instance(n, ci, h, w, co, k, 8)
    lhs = np.sum(backend.conv2d_forward(x, wt) * gy)
    rhs = np.sum(wt * backend.conv2d_grad_weight(gy, x, wt.shape))
    assert abs(lhs - rhs) < 1e-9


def test_backend_name_reports_selection():
    assert backend.backend_name() in ("numba", "numpy")


def test_shape_errors_are_descriptive():
    x = np.zeros((2, 3, 5, 5))
    wt = np.zeros((4, 2, 3, 3))  # in-channels mismatch
    with pytest.raises(ValueError):
        backend.conv2d_forward(x, wt)
