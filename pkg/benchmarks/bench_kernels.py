"""Compiled nonuniform DFT core versus the NumPy/BLAS fallback.

Usage: ``python benchmarks/bench_kernels.py [--repeat 3] [--threads 1]``.
Prints one line per case with the best time of each backend, their ratio,
and the maximum difference between the two results.
"""
import argparse
import time

import numpy as np

from conewave import kernels


def best(fn, repeat):
    t = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        t = min(t, time.perf_counter() - t0)
    return t, out


CASES = [
    # (label, kind, rows, points, nodes, dim)
    ("atom, 1-D", "type2", 1, 4000, 255, 1),
    ("atom, 2-D", "type2", 1, 2000, 3000, 2),
    ("adjoint, 2-D", "type1", 1, 2000, 3000, 2),
    ("voices, 2-D", "type2", 64, 1000, 2000, 2),
    ("spd2 atom, 3-D", "type2", 2, 1500, 4000, 3),
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    kernels.set_threads(args.threads)
    rng = np.random.default_rng(0)
    print(f"compiled core available: {kernels.BACKEND == 'cython'}")
    print(f"{'case':<16}{'rows':>6}{'points':>8}{'nodes':>7}{'cython s':>11}{'numpy s':>10}{'speedup':>9}"
          f"{'max diff':>11}")
    for label, kind, rows, npts, nnodes, dim in CASES:
        P = rng.uniform(-3, 3, size=(npts, dim))
        N = rng.uniform(0.2, 2.0, size=(nnodes, dim))
        C = rng.normal(size=(rows, nnodes if kind == "type2" else npts)) * (1 + 0j)
        fn = getattr(kernels, kind)
        tn, a = best(lambda: fn(P, N, C, backend="numpy"), args.repeat)
        if kernels.BACKEND == "cython":
            tc, b = best(lambda: fn(P, N, C, backend="cython"), args.repeat)
            diff = float(np.abs(a - b).max() / np.abs(a).max())
            print(f"{label:<16}{rows:>6}{npts:>8}{nnodes:>7}{tc:>11.4f}{tn:>10.4f}{tn / tc:>9.2f}{diff:>11.2e}")
        else:
            print(f"{label:<16}{rows:>6}{npts:>8}{nnodes:>7}{'n/a':>11}{tn:>10.4f}{'n/a':>9}{'n/a':>11}")


if __name__ == "__main__":
    main()
