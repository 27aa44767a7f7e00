"""Benchmark the split-scan kernels against each other.

The scan is the hot loop of forest training: for one feature column, sorted,
it scores every class boundary and returns the best. This script times the
compiled kernel against the numpy fallback over a range of column lengths
and verifies they return identical results while at it.

Usage:
    python3 benchmarks/bench_split.py [--sizes 1000,10000,100000] [--classes 5]
"""

import argparse
import time

import numpy as np

from flowcodec.forest import available_backends, get_kernel


def time_kernel(kernel, columns, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for values, labels, k in columns:
            kernel(values, labels, k)
        best = min(best, time.perf_counter() - t0)
    return best


def make_columns(n, n_classes, count, rng):
    columns = []
    for _ in range(count):
        values = np.sort(rng.normal(size=n))
        labels = rng.integers(0, n_classes, size=n).astype(np.int64)
        columns.append((values, labels, n_classes))
    return columns


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="1000,10000,100000",
                        help="comma-separated column lengths")
    parser.add_argument("--classes", type=int, default=5, help="label arity")
    parser.add_argument("--columns", type=int, default=20,
                        help="columns per timing batch")
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repetitions (best is kept)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    if "cython" not in backends:
        print("compiled kernel not built; timing the fallback only")

    rng = np.random.default_rng(args.seed)
    sizes = [int(s) for s in args.sizes.split(",")]
    header = f"{'rows':>8}  " + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)

    for n in sizes:
        columns = make_columns(n, args.classes, args.columns, rng)
        times = {}
        for name in backends:
            times[name] = time_kernel(get_kernel(name), columns, args.repeats)
        if len(backends) == 2:
            py, cy = get_kernel("python"), get_kernel("cython")
            for values, labels, k in columns:
                assert py(values, labels, k) == cy(values, labels, k), "kernel mismatch"
        row = f"{n:>8}  " + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
        if len(backends) == 2:
            row += f"{times['python'] / times['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
