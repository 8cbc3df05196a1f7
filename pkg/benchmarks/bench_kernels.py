#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run as ``python benchmarks/bench_kernels.py``.  The same comparison is
what you get end-to-end by setting ``TLS_LOCATOR_NO_NUMBA=1``.
"""

import time

import numpy as np

from tls_locator import kernels
from tls_locator.backend import HAS_NUMBA


def timeit(fn, *args, repeat=5):
    best = float("inf")
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, result


def bench_lorentzians():
    rng = np.random.default_rng(0)
    n_def, n_steps, n_freq = 40, 2880, 467
    f_grid = 5.6 + 0.0015 * np.arange(n_freq)
    f_def = rng.uniform(5.5, 6.4, size=(n_def, n_steps))
    peaks = rng.uniform(1.0, 30.0, n_def)
    hwhm = np.full(n_def, 2.0)

    def run_numba():
        rates = np.zeros((n_steps, n_freq))
        kernels._add_lorentzian_ridges_numba(rates, f_grid, f_def, peaks, hwhm)
        return rates

    def run_numpy():
        rates = np.zeros((n_steps, n_freq))
        kernels._add_lorentzian_ridges_numpy(rates, f_grid, f_def, peaks, hwhm)
        return rates

    if HAS_NUMBA:
        run_numba()  # compile outside the timing loop
        t_nb, r_nb = timeit(run_numba)
    else:
        t_nb, r_nb = float("nan"), None
    t_np, r_np = timeit(run_numpy)
    if r_nb is not None:
        assert np.allclose(r_nb, r_np, rtol=1e-12, atol=1e-12)
    report("lorentzian ridge accumulation", t_nb, t_np)
    return r_np


def bench_peak_scan(rates):
    def run_numba():
        return kernels._find_peaks_grid_numba(rates, 0.5)

    def run_numpy():
        return kernels._find_peaks_grid_numpy(rates, 0.5)

    if HAS_NUMBA:
        run_numba()
        t_nb, r_nb = timeit(run_numba)
    else:
        t_nb, r_nb = float("nan"), None
    t_np, r_np = timeit(run_numpy)
    if r_nb is not None:
        assert np.array_equal(r_nb[0], r_np[0])
        assert np.allclose(r_nb[1], r_np[1])
    report("map peak scan", t_nb, t_np)


def bench_sv_scan():
    rng = np.random.default_rng(1)
    x = np.linspace(0.0, 225.0, 150)
    ratio = 3.2 + 7.0 * (x / 225.0) ** 0.8
    alpha_tb = np.pi * np.minimum(x / 400.0 + 0.002, 0.999)
    alphas = (np.arange(512) + 0.5) * np.pi / 512
    targets = rng.uniform(2.5, 9.0, size=200)

    def run(fn):
        total = 0
        for t in targets:
            idx, roots = fn(x, ratio, alpha_tb, alphas, t, 0.1)
            total += roots.size
        return total

    if HAS_NUMBA:
        run(kernels._sv_alpha_scan_numba)
        t_nb, n_nb = timeit(run, kernels._sv_alpha_scan_numba, repeat=3)
    else:
        t_nb, n_nb = float("nan"), None
    t_np, n_np = timeit(run, kernels._sv_alpha_scan_numpy, repeat=3)
    if n_nb is not None:
        assert n_nb == n_np
    report("orientation root scan (200 defects)", t_nb, t_np)


def report(name, t_numba, t_numpy):
    if t_numba == t_numba:  # not NaN
        print(f"{name:40s} numba {t_numba * 1e3:9.2f} ms   "
              f"numpy {t_numpy * 1e3:9.2f} ms   speedup {t_numpy / t_numba:6.1f}x")
    else:
        print(f"{name:40s} numba       n/a   numpy {t_numpy * 1e3:9.2f} ms")


if __name__ == "__main__":
    rates = bench_lorentzians()
    bench_peak_scan(rates)
    bench_sv_scan()
