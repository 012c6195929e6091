"""Time the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from zerosub import _kernels
from zerosub._kernels import _pure


def _gibbs_case(rng, N=2000, D=8, K=10):
    X = np.ascontiguousarray(rng.normal(size=(N, D)))
    z = rng.integers(0, K, size=N).astype(np.int64)
    cap = N + 1
    n = np.zeros(cap, dtype=np.int64)
    S1, S2 = np.zeros((cap, D)), np.zeros((cap, D))
    np.add.at(n, z, 1)
    np.add.at(S1, z, X)
    np.add.at(S2, z, X * X)
    order = rng.permutation(N).astype(np.int64)
    u = rng.random(N)
    args = (X, z, n, S1, S2, order, u, X.mean(0), 0.01, 1.0, X.var(0), 1.0, K)

    def run(impl):
        # fresh copies of the mutable state for each call
        a = list(args)
        a[1], a[2], a[3], a[4] = z.copy(), n.copy(), S1.copy(), S2.copy()
        impl.gibbs_sweep(*a)
    return run


def _dtw_case(rng, n=60, m=70):
    cost = np.ascontiguousarray(rng.random((n, m)))
    return lambda impl: impl.dtw_accumulate(cost)


def _viterbi_case(rng, T=600, L=120):
    emit = np.ascontiguousarray(rng.normal(size=(T, L)))
    ls, la = np.log(np.full(L, 0.75)), np.log(np.full(L, 0.25))
    return lambda impl: impl.viterbi_chain(emit, ls, la)


def _best(fn, impl, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(impl)
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _kernels.ckernels is None:
        print("compiled extension not available; only the fallback is timed")
    rng = np.random.default_rng(0)
    cases = [("gibbs_sweep N=2000 D=8", _gibbs_case(rng)),
             ("dtw_accumulate 60x70", _dtw_case(rng)),
             ("viterbi_chain T=600 L=120", _viterbi_case(rng))]
    print(f"{'kernel':28s} {'python (s)':>12s} {'cython (s)':>12s} {'speedup':>9s}")
    for name, fn in cases:
        tp = _best(fn, _pure, args.repeat)
        if _kernels.ckernels is not None:
            tc = _best(fn, _kernels.ckernels, args.repeat)
            print(f"{name:28s} {tp:12.5f} {tc:12.5f} {tp / tc:8.1f}x")
        else:
            print(f"{name:28s} {tp:12.5f} {'-':>12s} {'-':>9s}")


if __name__ == "__main__":
    main()
