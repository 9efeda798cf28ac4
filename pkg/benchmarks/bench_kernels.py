"""Time the compiled kernels against the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import time

import numpy as np

from egotraj import _kernels_py as pure

try:
    from egotraj import _kernels as compiled
except ImportError:
    compiled = None


def cases(rng):
    F, H, W, n, L = 31, 72, 96, 400, 15
    bins = rng.integers(-1, 9, size=(F, H, W)).astype(np.int8)
    weights = rng.random((F, H, W))
    idx = np.tile(np.arange(L), (n, 1))
    cx = rng.integers(0, W, size=(n, 1)) + np.cumsum(rng.integers(-1, 2, size=(n, L)), axis=1)
    cy = rng.integers(0, H, size=(n, 1)) + np.cumsum(rng.integers(-1, 2, size=(n, L)), axis=1)
    X = rng.random((300, 500))
    D = pure.chi2_distance_matrix(X, X)
    K = np.exp(-D / D.mean())
    y = np.where(rng.random(300) < 0.5, 1.0, -1.0)
    return {
        "cell_histograms 400 trajectories": lambda m: m.cell_histograms(bins, weights, idx, cx, cy, 9, 32, 2, 3),
        "chi2_distance_matrix 300x300x500": lambda m: m.chi2_distance_matrix(X, X),
        "smo_solve n=300": lambda m: m.smo_solve(K, y, 10.0, 1e-3, 1_000_000),
    }


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':<36}{'python s':>10}{'cython s':>10}{'speedup':>9}")
    for name, run in cases(np.random.default_rng(args.seed)).items():
        tp = best_time(lambda: run(pure), args.repeat)
        if compiled is None:
            print(f"{name:<36}{tp:>10.4f}")
            continue
        tc = best_time(lambda: run(compiled), args.repeat)
        print(f"{name:<36}{tp:>10.4f}{tc:>10.4f}{tp / tc:>8.1f}x")


if __name__ == "__main__":
    main()
