"""Benchmark the compiled kernels against the pure-numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]

Covers the three hot loops (nearest-centroid scan, cluster accumulation,
Markov sampling) at quantizer-realistic sizes, plus one end-to-end
k-means fit per backend.
"""

import argparse
import time

import numpy as np

from unitprompt import kernels, quantizer
from unitprompt.featio import FeatureMatrix


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    backends = kernels.backends()
    print(f"available backends: {', '.join(backends)} (active: {kernels.BACKEND})\n")

    rng = np.random.default_rng(0)
    x = rng.normal(size=(100_000, 40))
    centroids = rng.normal(size=(100, 40))
    labels, _ = kernels.nearest_centroids(x, centroids)
    transition = rng.dirichlet(np.full(100, 0.5), size=100)
    start = np.full(100, 0.01)
    uniforms = rng.random(250_000)

    rows = []
    for name, impl in backends.items():
        t_assign = timeit(lambda: kernels.nearest_centroids(x, centroids, impl=impl),
                          args.repeats)
        t_sums = timeit(lambda: kernels.cluster_sums(x, labels, 100, impl=impl),
                        args.repeats)
        t_walk = timeit(lambda: kernels.markov_walk(transition, start, uniforms, impl=impl),
                        args.repeats)
        rows.append((name, t_assign, t_sums, t_walk))

    print(f"{'backend':<10} {'assign 100k x 100':>18} {'sums 100k':>12} {'walk 250k':>12}")
    for name, t_assign, t_sums, t_walk in rows:
        print(f"{name:<10} {t_assign * 1000:>15.1f} ms {t_sums * 1000:>9.1f} ms "
              f"{t_walk * 1000:>9.1f} ms")
    if len(rows) == 2:
        by = {name: (a, s, w) for name, a, s, w in rows}
        speedups = [by['python'][i] / by['cython'][i] for i in range(3)]
        print(f"\ncython speedup: assign x{speedups[0]:.1f}, sums x{speedups[1]:.1f}, "
              f"walk x{speedups[2]:.1f}")

    print("\nend-to-end kmeans_fit (20k frames, k=50):")
    feats = FeatureMatrix(rng.normal(size=(20_000, 40)), 50.0)
    for name, impl in backends.items():
        saved = kernels._impl
        kernels._impl = impl  # route the quantizer through this backend
        try:
            t = timeit(lambda: quantizer.kmeans_fit(feats, k=50, max_iters=20, seed=0), 1)
        finally:
            kernels._impl = saved
        print(f"  {name:<10} {t:.2f} s")


if __name__ == "__main__":
    main()
