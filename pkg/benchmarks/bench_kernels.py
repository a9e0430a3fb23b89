"""Timing comparison of the chamfer kernels' two backends.

Runs the forward and backward chamfer kernels over a grid of problem
sizes with the compiled numba path and the pure-numpy fallback, and
prints a table of per-call times and speedups. The numpy path is forced
per call (the module-level dispatch stays whatever the environment
selected), so one process can time both.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from hdcaps import kernels

SIZES = [  # (batch, n, m, d)
    (64, 25, 6, 3),
    (64, 25, 6, 16),
    (64, 25, 30, 16),
    (16, 128, 32, 16),
    (4, 512, 64, 50),
]


def _time(fn, repeats):
    fn()  # warmup (and numba compilation)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(repeats: int) -> None:
    rng = np.random.default_rng(0)
    if not kernels.NUMBA_ENABLED:
        print("numba path unavailable (HDCAPS_NO_NUMBA set or numba missing); "
              "timing the numpy fallback only")
    header = (f"{'batch':>5} {'n':>5} {'m':>5} {'d':>4} "
              f"{'numpy (us)':>12} {'numba (us)':>12} {'speedup':>8}")
    print(header)
    print("-" * len(header))
    for bsz, n, m, d in SIZES:
        p = rng.normal(size=(bsz, n, d))
        q = rng.normal(size=(bsz, m, d))
        gout = np.ones(bsz)

        def run_np():
            _, idx_pq, idx_qp = kernels._chamfer_forward_np(p, q)
            kernels._chamfer_backward_np(p, q, idx_pq, idx_qp, gout)

        t_np = _time(run_np, repeats)
        if kernels.NUMBA_ENABLED:
            def run_nb():
                _, idx_pq, idx_qp = kernels._chamfer_forward_nb(p, q)
                kernels._chamfer_backward_nb(p, q, idx_pq, idx_qp, gout)

            t_nb = _time(run_nb, repeats)
            print(f"{bsz:>5} {n:>5} {m:>5} {d:>4} {t_np * 1e6:>12.1f} "
                  f"{t_nb * 1e6:>12.1f} {t_np / t_nb:>8.2f}x")
        else:
            print(f"{bsz:>5} {n:>5} {m:>5} {d:>4} {t_np * 1e6:>12.1f} "
                  f"{'-':>12} {'-':>8}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()
    bench(args.repeats)


if __name__ == "__main__":
    main()
