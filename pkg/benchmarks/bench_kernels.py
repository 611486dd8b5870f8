"""Throughput comparison of the co-occurrence counting kernels.

Runs the numba build (when available) and the pure-numpy build on the same
masked patches and prints pairs/second for each. The numpy build is what
``RCVKIT_NO_NUMBA=1`` selects at import time.

Usage: python3 benchmarks/bench_kernels.py [--size 256] [--repeats 20]
"""

import argparse
import time

import numpy as np

import rcvkit._kernels as kernels

OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))


def bench(fn, image, mask, levels, repeats):
    fn(image, mask, 0, 1, levels)  # warm-up (JIT compile on the numba path)
    start = time.perf_counter()
    for _ in range(repeats):
        for dy, dx in OFFSETS:
            fn(image, mask, dy, dx, levels)
    elapsed = time.perf_counter() - start
    pairs = image.size * len(OFFSETS) * repeats
    return elapsed, pairs / elapsed


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=256)
    parser.add_argument("--levels", type=int, default=8)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    image = np.ascontiguousarray(
        rng.integers(0, args.levels, size=(args.size, args.size)))
    mask = np.ascontiguousarray(rng.random((args.size, args.size)) < 0.6)

    results = {}
    t, rate = bench(kernels._glcm_counts_numpy, image, mask, args.levels,
                    args.repeats)
    results["numpy"] = (t, rate)
    if kernels.USE_NUMBA:
        t, rate = bench(kernels._glcm_counts_numba, image, mask, args.levels,
                        args.repeats)
        results["numba"] = (t, rate)
        a = kernels._glcm_counts_numpy(image, mask, 1, 1, args.levels)
        b = kernels._glcm_counts_numba(image, mask, 1, 1, args.levels)
        assert np.array_equal(a, b), "kernel outputs disagree"
    else:
        print("numba path unavailable (RCVKIT_NO_NUMBA set or not installed)")

    print(f"patch {args.size}x{args.size}, {args.levels} levels, "
          f"{len(OFFSETS)} offsets x {args.repeats} repeats")
    for name, (elapsed, rate) in results.items():
        print(f"  {name:6s} {elapsed:8.4f} s   {rate / 1e6:8.1f} Mpairs/s")
    if len(results) == 2:
        speedup = results["numba"][1] / results["numpy"][1]
        print(f"  numba speedup: {speedup:.1f}x")


if __name__ == "__main__":
    main()
