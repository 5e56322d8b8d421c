"""Benchmark the jit and pure-numpy builds of the label-model hot kernels.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Covers the two inner loops that dominate training time: exhaustive state
enumeration (exact negative phase) and persistent Gibbs sweeps, plus one
end-to-end fit at a realistic 19-signal width. The numpy build is always
benchmarked; the jit build only when numba imports.
"""

import argparse
import time

import numpy as np

from credweak import kernels
from credweak import label_model as lm


def timeit(fn, repeats, warmup=1):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def builds():
    out = [("numpy", False)]
    if kernels.HAVE_NUMBA:
        out.append(("numba", True))
    return out


def bench_exact(repeats):
    print("\nexact enumeration (log Z + feature expectations), one epoch")
    print(f"{'n':>4} {'build':>7} {'ms/epoch':>12} {'speedup':>9}")
    empty = np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng(0)
    for n in (6, 8, 10, 12):
        w = rng.normal(0, 1, size=2 * n)
        baseline = None
        for name, use_numba in builds():
            engine = kernels.ExactEngine(n, empty, empty, use_numba=use_numba)
            best = timeit(lambda: engine.expectations(w[:n], w[n:], np.zeros(0)), repeats)
            speedup = "" if baseline is None else f"{baseline / best:8.1f}x"
            if baseline is None:
                baseline = best
            print(f"{n:>4} {name:>7} {best * 1e3:>12.3f} {speedup:>9}")


def bench_gibbs(repeats):
    print("\npersistent Gibbs sweeps (100 chains x 5 sweeps), one epoch")
    print(f"{'n':>4} {'build':>7} {'ms/epoch':>12} {'speedup':>9}")
    empty = np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng(0)
    for n in (10, 19, 40):
        w = rng.normal(0, 1, size=2 * n)
        uniforms = rng.random((5, 100, n + 1))
        baseline = None
        for name, use_numba in builds():
            lam = rng.integers(-1, 2, size=(100, n), dtype=np.int8)
            y = rng.integers(0, 2, size=100, dtype=np.int8)

            def step(lam=lam, y=y):
                kernels.gibbs_accumulate(
                    lam, y, w[:n], w[n:], empty, empty, np.zeros(0), uniforms,
                    use_numba=use_numba,
                )

            best = timeit(step, repeats)
            speedup = "" if baseline is None else f"{baseline / best:8.1f}x"
            if baseline is None:
                baseline = best
            print(f"{n:>4} {name:>7} {best * 1e3:>12.3f} {speedup:>9}")


def bench_fit(repeats):
    print("\nfull 500-epoch fit, 19 signals x 500 articles (gibbs mode)")
    print(f"{'build':>7} {'seconds':>10} {'speedup':>9}")
    rng = np.random.default_rng(1)
    y = rng.integers(0, 2, size=500)
    votes = np.full((500, 19), -1, dtype=np.int8)
    for j in range(19):
        active = rng.random(500) < 0.7
        correct = rng.random(500) < 0.75
        votes[active & correct, j] = y[active & correct]
        votes[active & ~correct, j] = 1 - y[active & ~correct]
    vm = lm.VoteMatrix("bench", [str(i) for i in range(500)],
                       [f"s{j}" for j in range(19)], votes)
    cfg = lm.LabelModelConfig(seed=0, mode="gibbs")
    import credweak.kernels as k

    baseline = None
    saved = k.USE_NUMBA
    try:
        for name, use_numba in builds():
            k.USE_NUMBA = use_numba
            best = timeit(lambda: lm.fit(vm, None, cfg), repeats)
            speedup = "" if baseline is None else f"{baseline / best:8.1f}x"
            if baseline is None:
                baseline = best
            print(f"{name:>7} {best:>10.2f} {speedup:>9}")
    finally:
        k.USE_NUMBA = saved


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    print(f"active default build: {kernels.active_build()}")
    bench_exact(args.repeats)
    bench_gibbs(args.repeats)
    bench_fit(max(1, args.repeats // 2))


if __name__ == "__main__":
    main()
