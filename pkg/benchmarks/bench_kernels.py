"""Compare the compiled win-count kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Sizes mirror the simulation defaults: n = 100 games, K = 100 posterior
draws, a few hundred candidate responses per call.
"""
import argparse
import timeit

import numpy as np

from tourncp import _fallback

try:
    from tourncp import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    n = 100
    A, B, C, D = rng.standard_normal((4, n))
    ys = rng.standard_normal(400) * 3
    mu = rng.standard_normal((n, 100))
    ll = -0.5 * rng.standard_normal((n, 100)) ** 2
    ys_b = np.linspace(-5, 5, 200)
    return {
        "affine n=100 y=400": lambda m: m.count_affine_wins(A, B, C, D, ys, 0.0),
        "affine n=100 y=400 eps": lambda m: m.count_affine_wins(A, B, C, D, ys, 0.2),
        "lse n=100 K=100 y=200": lambda m: m.count_lse_wins(mu, ll, ys_b, 1.0,
                                                            2.0, 1.0, 2.0, 1.0, 0.0),
        "lse n=100 K=100 y=200 eps": lambda m: m.count_lse_wins(mu, ll, ys_b, 1.0,
                                                                2.0, 1.0, 2.0, 1.0, 1e-4),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'case':28s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(_fallback), number=args.number,
                                 repeat=args.repeat)) / args.number * 1e3
        if _kernels is None:
            print(f"{name:28s} {t_py:10.3f} {'n/a':>10s} {'':>8s}")
            continue
        assert np.array_equal(fn(_fallback), fn(_kernels))
        t_cy = min(timeit.repeat(lambda: fn(_kernels), number=args.number,
                                 repeat=args.repeat)) / args.number * 1e3
        print(f"{name:28s} {t_py:10.3f} {t_cy:10.3f} {t_py / t_cy:7.1f}x")


if __name__ == "__main__":
    main()
