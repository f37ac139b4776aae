"""Compare the compiled and numpy backends of the R_NX join-count kernel.

Usage::

    python3 benchmarks/bench_kernels.py [--sizes 1000 2000 4000] [--repeats 3] [--threads 1]

For every size the script checks that both backends return identical join
counts and prints the best-of-``repeats`` wall time of each, plus the speedup.
"""

import argparse
import time

import numpy as np

from groupenc import kernels


def best_time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[1000, 2000, 4000])
    parser.add_argument("--dim", type=int, default=50)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)

    if kernels.compiled_backend is None:
        print("compiled extension not available; only the numpy backend will be timed")
    print(f"{'N':>6} {'numpy [s]':>10} {'cython [s]':>11} {'speedup':>8} equal")
    gen = np.random.default_rng(0)
    for n in args.sizes:
        hd, ld = gen.normal(size=(n, args.dim)), gen.normal(size=(n, 2))
        t_py, ref = best_time(lambda: kernels.python_backend.join_counts(hd, ld, args.threads), args.repeats)
        if kernels.compiled_backend is None:
            print(f"{n:>6} {t_py:>10.3f} {'-':>11} {'-':>8} -")
            continue
        t_c, out = best_time(lambda: kernels.compiled_backend.join_counts(hd, ld, args.threads), args.repeats)
        print(f"{n:>6} {t_py:>10.3f} {t_c:>11.3f} {t_py / t_c:>8.2f} {np.array_equal(ref, out)}")


if __name__ == "__main__":
    main()
