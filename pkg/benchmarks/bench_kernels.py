#!/usr/bin/env python3
"""Benchmark the compiled kernels against the NumPy fallback.

The per-query kernels dominate training and evaluation time.  The NumPy
fallback vectorizes them with positives-by-instances matrices (O(P*N)
memory per query); the compiled backend streams the same sums in O(N)
memory.  This script times both on a synthetic graded query across
retrieval-set sizes and prints the speedups.

Usage: python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from rankbound.kernels import reference

try:
    from rankbound.kernels import _fast
except ImportError:
    _fast = None

TAU, DELTA, RHO = 0.01, 0.046, 100.0


def make_problem(n, rng):
    scores = rng.uniform(-1.0, 1.0, size=n)
    rel = rng.choice([0.0, 1 / 3, 2 / 3, 1.0], size=n, p=[0.6, 0.15, 0.15, 0.1])
    if not (rel > 0).any():
        rel[0] = 1.0
    return scores, rel


def bench(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--sizes", type=str, default="256,1024,4096")
    args = parser.parse_args()
    if _fast is None:
        print("compiled kernels are not built; run pip install -e . first")
        return

    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(0)
    kernels = [
        ("exact_rank_stats", lambda m, s, r, w: m.exact_rank_stats(s, r)),
        ("smooth_rank_minus", lambda m, s, r, w: m.smooth_rank_minus(
            s, r, TAU, DELTA, RHO)),
        ("smooth_rank_backward", lambda m, s, r, w:
            m.smooth_rank_minus_backward(s, r, w, TAU, DELTA, RHO)),
        ("smooth_ap_sigmoid", lambda m, s, r, w: m.smooth_ap_sigmoid(
            s, (r > 0).astype(float), TAU)),
    ]
    print(f"{'kernel':<22}{'N':>6}{'numpy':>12}{'compiled':>12}{'speedup':>9}")
    for n in sizes:
        scores, rel = make_problem(n, rng)
        weights = rng.normal(size=int((rel > 0).sum()))
        for name, call in kernels:
            t_ref = bench(call, (reference, scores, rel, weights), args.repeats)
            t_fast = bench(call, (_fast, scores, rel, weights), args.repeats)
            print(f"{name:<22}{n:>6}{t_ref * 1e3:>10.2f}ms"
                  f"{t_fast * 1e3:>10.2f}ms{t_ref / t_fast:>8.1f}x")


if __name__ == "__main__":
    main()
