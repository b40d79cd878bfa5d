"""Compiled kernels against the pure-Python fallback.

Times the special functions and the capital simulation loop on both
backends, checks that they return bit-identical samples, and prints the
speed-up. Usage: python3 benchmarks/bench_kernels.py [--samples K] [--workers W]
"""

import argparse
import importlib
import math
import time

import numpy as np

from opbayes import _pykernels


def _best_of(fn, repeat):
    best = math.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def _rows(width):
    rows = np.zeros((3, width))
    rows[:, 11] = math.inf
    rows[0, :9] = [1, 3.407, 0.147, 0, 1, 1, 0.28, 0.21, 2.0]
    rows[1, :10] = [2, 23.0, 0.2, 2.0, 1, 5, 23.086, 0.217, 2.0, math.inf]
    rows[1, 10] = 1.0
    rows[2, :10] = [1, 5.0, 0.4, 0, 1.5, 2, 8.0, 2.0, 0.5, 3.0]
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=20000)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    try:
        cy = importlib.import_module("opbayes._kernels")
    except ImportError:
        raise SystemExit("compiled kernels not built; run: pip install -e . --no-build-isolation")
    py = _pykernels

    rng = np.random.default_rng(0)
    a = rng.uniform(0.1, 50, 2000)
    p = rng.uniform(1e-6, 1 - 1e-6, 2000)
    print(f"{'task':<34}{'python s':>12}{'compiled s':>12}{'speed-up':>10}")
    for name, fn in [("gamma_inv x2000", lambda k: [k.gamma_inv(x, q, 0) for x, q in zip(a, p)]),
                     ("gamma_q x2000", lambda k: [k.gamma_q(x, x * q * 2) for x, q in zip(a, p)]),
                     ("t_ppf x2000", lambda k: [k.t_ppf(q, x) for x, q in zip(a, p)])]:
        tp = _best_of(lambda: fn(py), args.repeat)
        tc = _best_of(lambda: fn(cy), args.repeat)
        print(f"{name:<34}{tp:>12.4f}{tc:>12.4f}{tp / tc:>10.1f}")

    rows = _rows(py.ROW_WIDTH)
    factor = np.linalg.cholesky(np.array([[1, 0.6, 0.2], [0.6, 1, 0.3], [0.2, 0.3, 1]]))
    cells, kinds = np.array([0, 1, 2]), np.array([0, 1, 0])
    K = args.samples
    out = {}

    def sim(k, w, key):
        out[key] = k.simulate(rows, K, 2024, factor, cells, kinds, w)

    tp = _best_of(lambda: sim(py, 1, "py"), 1)
    tc1 = _best_of(lambda: sim(cy, 1, "cy1"), args.repeat)
    tcw = _best_of(lambda: sim(cy, args.workers, "cyw"), args.repeat)
    print(f"{f'simulate K={K}, 3 cells, 1 thread':<34}{tp:>12.4f}{tc1:>12.4f}{tp / tc1:>10.1f}")
    print(f"{f'simulate compiled, {args.workers} threads':<34}{'':>12}{tcw:>12.4f}{tp / tcw:>10.1f}")
    same = np.array_equal(out["py"], out["cy1"]) and np.array_equal(out["cy1"], out["cyw"])
    print(f"samples bit-identical across backends and thread counts: {same}")


if __name__ == "__main__":
    main()
