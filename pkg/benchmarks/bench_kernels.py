"""Time each hot kernel under the compiled and numpy backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes follow one UBM EM pass over a synthetic session: 60k frames of a
21-dimensional pooled feature against a 64-component mixture.
"""

import argparse
import timeit

import numpy as np

from cogload import _backend


def workloads(rng):
    n, F, C, channels = 60_000, 21, 64, 63
    X = rng.standard_normal((n, F))
    w = np.full(C, 1.0 / C)
    mu = rng.standard_normal((C, F))
    var = rng.random((C, F)) + 0.5
    raw = rng.standard_normal((n, channels))
    groups = [rng.choice(channels, size=3, replace=False) for _ in range(F)]
    flat = np.concatenate(groups).astype(np.int64)
    offsets = np.arange(0, 3 * F + 1, 3, dtype=np.int64)
    starts = np.repeat(np.arange(0, n, 150), 150)[:n].astype(np.int64)
    return {
        "gmm_accumulate": lambda k: k.gmm_accumulate(X, w, mu, var, True),
        "gmm_posteriors": lambda k: k.gmm_posteriors(X, w, mu, var),
        "kmeans_assign": lambda k: k.kmeans_assign(X, mu),
        "pool_groups(max)": lambda k: k.pool_groups(raw, flat, offsets, 2),
        "trailing_mean(16)": lambda k: k.trailing_mean(X, starts, 16),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    names = [b for b in ("cython", "python") if b in _backend.BACKENDS]
    if len(names) < 2:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'kernel':<20}" + "".join(f"{b + ' (s)':>14}" for b in names) + ("   speedup" if len(names) == 2 else ""))
    for label, fn in workloads(np.random.default_rng(0)).items():
        times = []
        for b in names:
            kern = _backend.BACKENDS[b]
            fn(kern)  # warm up
            times.append(min(timeit.repeat(lambda: fn(kern), number=1, repeat=args.repeat)))
        row = f"{label:<20}" + "".join(f"{t:>14.4f}" for t in times)
        if len(times) == 2:
            row += f"{times[1] / times[0]:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
