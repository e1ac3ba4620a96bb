"""Time the compiled kNN kernel against the numpy fallback.

    python benchmarks/bench_knn.py [--repeat 5]

Prints one row per (P, n, L, queries) case with the best wall time of each
backend and the speed-up. Results are also checked for bit-identity.
"""
import argparse
import timeit

import numpy as np

from impfilter import kernels

CASES = [  # buffer size, dimension, neighbours, queries
    (16, 2, 3, 100),
    (64, 10, 8, 100),
    (256, 10, 8, 1000),
    (256, 784, 8, 100),
    (1024, 20, 16, 1000),
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if kernels.knn_query_ext is None:
        print("compiled kernel not available; timing the numpy fallback only")
    rng = np.random.default_rng(args.seed)
    print(f"{'P':>5} {'n':>4} {'L':>3} {'Q':>5} {'python ms':>10} {'compiled ms':>12} {'speed-up':>9}")
    for P, n, L, Q in CASES:
        X = rng.random((P, n))
        s = rng.random(P)
        q = rng.random((Q, n))
        t_py = min(timeit.repeat(lambda: kernels.knn_query_py(X, s, q, L), number=1, repeat=args.repeat))
        row = f"{P:>5} {n:>4} {L:>3} {Q:>5} {t_py * 1e3:>10.3f}"
        if kernels.knn_query_ext is not None:
            t_ext = min(timeit.repeat(lambda: kernels.knn_query_ext(X, s, q, L), number=1,
                                      repeat=args.repeat))
            a, b = kernels.knn_query_py(X, s, q, L), kernels.knn_query_ext(X, s, q, L)
            same = all(np.array_equal(u, v) for u, v in zip(a, b))
            row += f" {t_ext * 1e3:>12.3f} {t_py / t_ext:>8.1f}x" + ("" if same else "  MISMATCH")
        print(row)


if __name__ == "__main__":
    main()
