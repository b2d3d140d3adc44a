"""Finite-difference oracles for gradients and Jacobians."""

import numpy as np


def finite_difference_grad(f, x, h=1e-5):
    """Central-difference gradient of a scalar function at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def finite_difference_jacobian(f, x, h=1e-6):
    """Central-difference dense Jacobian of a vector function at array x."""
    x = np.asarray(x, dtype=np.float64)
    y0 = np.asarray(f(x), dtype=np.float64).ravel()
    jac = np.zeros((y0.size, x.size))
    flat = x.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        yp = np.asarray(f(x), dtype=np.float64).ravel()
        flat[i] = orig - h
        ym = np.asarray(f(x), dtype=np.float64).ravel()
        flat[i] = orig
        jac[:, i] = (yp - ym) / (2.0 * h)
    return jac


def max_relative_error(analytic, numeric, floor=1e-8):
    """max |a-n| / max(|a|, |n|, floor) over all coordinates."""
    a = np.asarray(analytic).ravel()
    n = np.asarray(numeric).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
