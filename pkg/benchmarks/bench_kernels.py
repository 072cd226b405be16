#!/usr/bin/env python3
"""Time the compiled kernels against the NumPy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5] [--n 1024] [--tau 4]

Each kernel runs on identical inputs under both backends; outputs are checked
for agreement before timings are reported.
"""
import argparse
import sys
import time

import numpy as np

from gamris import kernels


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    return a == b or (isinstance(a, float) and abs(a - b) <= 1e-12 * max(1.0, abs(a)))


def cases(n, tau, rng):
    A = rng.standard_normal((tau, n)) + 1j * rng.standard_normal((tau, n))
    ks = np.arange(0, 20000, dtype=np.int64)
    # lookup grid for the disc of radius 60 lattice units
    z1, z2 = np.meshgrid(np.arange(-70, 71), np.arange(-70, 71), indexing="ij")
    inside = z1**2 + z1 * z2 + z2**2 <= 3600
    grid = np.full(z1.shape, -1, np.int64)
    grid[inside] = np.arange(int(inside.sum()))
    y = (rng.uniform(-55, 55, 200000) + 1j * rng.uniform(-55, 55, 200000))
    return {
        "best_pair": lambda k: k.best_pair(A),
        "hex_points": lambda k: k.hex_points(ks),
        "hex_nearest": lambda k: k.hex_nearest(y, grid, -70, -70),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, default=1024, help="columns for best_pair")
    ap.add_argument("--tau", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if kernels.compiled is None:
        print("compiled extension not built; only the NumPy fallback is available", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<12} {'python [s]':>12} {'cython [s]':>12} {'speedup':>9}  agree")
    for name, run in cases(args.n, args.tau, rng).items():
        tp, outp = best_of(lambda: run(kernels.python), args.repeat)
        tc, outc = best_of(lambda: run(kernels.compiled), args.repeat)
        print(f"{name:<12} {tp:12.4f} {tc:12.4f} {tp / tc:9.1f}  {same(outp, outc)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
