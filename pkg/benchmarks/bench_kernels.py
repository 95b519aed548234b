#!/usr/bin/env python3
"""Throughput comparison of the numba and numpy kernel flavours.

Run as: python benchmarks/bench_kernels.py
The env flag SEVI_NUMBA is irrelevant here; both flavours are timed directly.
"""

import time

import numpy as np

from sevi import kernels
from sevi._accel import HAVE_NUMBA


def _time(fn, *args, repeat=5):
    best = float("inf")
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, result


def bench_spill_field():
    print("\n-- spillover field (threshold-gated decay sum) --")
    rng = np.random.default_rng(42)
    for n, m in ((500, 200), (2000, 500), (5000, 1000)):
        px, py = rng.uniform(0, 6000, n), rng.uniform(0, 6000, n)
        ax, ay = rng.uniform(0, 6000, m), rng.uniform(0, 6000, m)
        sigma = rng.uniform(200, 3000, m)
        args = (px, py, ax, ay, sigma, 2000.0, kernels.DECAY_GAUSSIAN)
        t_np, r_np = _time(kernels.spill_field_numpy, *args)
        line = f"  n={n:5d} m={m:5d}  numpy {t_np * 1e3:8.2f} ms"
        if HAVE_NUMBA:
            kernels.spill_field_numba(*args)  # warm the JIT
            t_nb, r_nb = _time(kernels.spill_field_numba, *args)
            diff = float(np.max(np.abs(r_np - r_nb)))
            line += f"   numba {t_nb * 1e3:8.2f} ms   speedup {t_np / t_nb:6.1f}x   max|diff| {diff:.2e}"
        print(line)


def bench_gwr():
    print("\n-- GWR local weighted least squares --")
    rng = np.random.default_rng(7)
    for n, k in ((300, 5), (1000, 9), (2000, 9)):
        coords = rng.uniform(0, 5000, (n, 2))
        X = np.column_stack([np.ones(n), rng.normal(size=(n, k))])
        beta_true = rng.normal(size=k + 1)
        y = X @ beta_true + rng.normal(0, 0.1, n)
        bw = np.full(n, 1500.0)
        args = (np.ascontiguousarray(coords[:, 0]), np.ascontiguousarray(coords[:, 1]),
                np.ascontiguousarray(X), np.ascontiguousarray(y), bw, kernels.KERNEL_GAUSSIAN)
        t_np, r_np = _time(kernels.gwr_fit_numpy, *args, repeat=3)
        line = f"  n={n:5d} k={k:2d}  numpy {t_np * 1e3:8.1f} ms"
        if HAVE_NUMBA:
            kernels.gwr_fit_numba(*args)  # warm the JIT
            t_nb, r_nb = _time(kernels.gwr_fit_numba, *args, repeat=3)
            diff = float(np.max(np.abs(r_np[0] - r_nb[0])))
            line += f"   numba {t_nb * 1e3:8.1f} ms   speedup {t_np / t_nb:6.1f}x   max|beta diff| {diff:.2e}"
        print(line)


if __name__ == "__main__":
    print(f"numba available: {HAVE_NUMBA}")
    bench_spill_field()
    bench_gwr()
