"""Benchmark the numba conv kernels against the pure-numpy fallback.

Run twice to compare backends:

    python benchmarks/bench_kernels.py            # numba (if installed)
    INVLENS_NO_NUMBA=1 python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from invlens import backend


CASES = [
    # (n, c_in, h, w, c_out) roughly matching the desk-scale conv flow
    (64, 2, 14, 14, 32),
    (64, 32, 14, 14, 32),
    (64, 4, 7, 7, 32),
    (64, 32, 7, 7, 4),
]
REPS = 20


def bench(fn, *args):
    fn(*args)  # warmup (includes jit compile on the numba path)
    t0 = time.perf_counter()
    for _ in range(REPS):
        fn(*args)
    return (time.perf_counter() - t0) / REPS


def main():
    rng = np.random.default_rng(0)
    print(f"backend: {backend.backend_name()}   ({REPS} reps, 3x3 kernels)")
    print(f"{'case (n,cin,h,w,cout)':<28}{'forward':>10}{'grad_in':>10}"
          f"{'grad_w':>10}")
    for n, ci, h, w, co in CASES:
        x = rng.standard_normal((n, ci, h, w))
        wt = rng.standard_normal((co, ci, 3, 3)) * 0.1
        gy = rng.standard_normal((n, co, h, w))
        tf = bench(backend.conv2d_forward, x, wt)
        tg = bench(backend.conv2d_grad_input, gy, wt, x.shape)
        tw = bench(backend.conv2d_grad_weight, gy, x, wt.shape)
        print(f"{(n, ci, h, w, co)!s:<28}{tf * 1e3:>9.2f}ms{tg * 1e3:>9.2f}ms"
              f"{tw * 1e3:>9.2f}ms")


if __name__ == "__main__":
    main()
