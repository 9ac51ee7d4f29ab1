"""Benchmark: compiled objective-field kernel vs the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--cells N] [--paths P]

Times the per-path hot loop (tap gather + matched-filter magnitude) at a
production-like workload and reports both backends; also times one full
objective-field evaluation through whichever backend is active.
"""
import argparse
import time

import numpy as np

from mimoloc import _kernels


def bench_kernel(impl, corr, n0, taps, energy, repeats):
    cross = np.empty(len(n0), dtype=complex)
    ll = np.empty(len(n0))
    impl(corr, n0, taps, energy, cross, ll)  # warm-up
    t0 = time.perf_counter()
    for _ in range(repeats):
        impl(corr, n0, taps, energy, cross, ll)
    return (time.perf_counter() - t0) / repeats


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--cells", type=int, default=10_000)
    parser.add_argument("--paths", type=int, default=25)
    parser.add_argument("--lags", type=int, default=40_000)
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    corr = rng.standard_normal(args.lags) + 1j * rng.standard_normal(args.lags)
    n0 = rng.integers(0, args.lags - 8, size=args.cells).astype(np.int32)
    taps = np.ascontiguousarray(rng.standard_normal((args.cells, 8)))
    energy = rng.uniform(0.5, 2.0, size=args.cells)

    t_numpy = bench_kernel(_kernels.numpy_path_objective, corr, n0, taps,
                           energy, args.repeats)
    print(f"workload: {args.cells} cells x 8 taps, one path")
    print(f"numpy fallback : {t_numpy * 1e3:8.3f} ms/path "
          f"({args.paths * t_numpy * 1e3:.1f} ms per field)")
    if _kernels.HAVE_COMPILED:
        t_core = bench_kernel(_kernels.path_objective, corr, n0, taps,
                              energy, args.repeats)
        print(f"compiled core  : {t_core * 1e3:8.3f} ms/path "
              f"({args.paths * t_core * 1e3:.1f} ms per field)")
        print(f"speedup        : {t_numpy / t_core:8.2f}x")
        c1 = np.empty(args.cells, dtype=complex)
        l1 = np.empty(args.cells)
        c2 = np.empty(args.cells, dtype=complex)
        l2 = np.empty(args.cells)
        _kernels.numpy_path_objective(corr, n0, taps, energy, c1, l1)
        _kernels.path_objective(corr, n0, taps, energy, c2, l2)
        agree = np.allclose(c1, c2, rtol=1e-13) and np.allclose(l1, l2,
                                                                rtol=1e-13)
        print(f"parity         : {'identical' if agree else 'MISMATCH'}")
    else:
        print("compiled core  : not built (numpy fallback active)")
    print(f"active backend : {_kernels.BACKEND}")


if __name__ == "__main__":
    main()
