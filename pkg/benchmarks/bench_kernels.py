"""Time the numba kernels against their numpy counterparts.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 400]

Each kernel is called once before timing so numba compilation is excluded.
Results agree exactly between flavours; the script checks that too.
"""
import argparse
import timeit

import numpy as np

from sbrp import kernels


def cases(size, rng):
    pts = rng.uniform(0, 3, (size, 2))
    travel = kernels.pairwise_distance_np(pts, pts) * 3.0
    probs = rng.uniform(0, 1, min(size, 200))
    seq = np.concatenate([[0], rng.permutation(np.arange(1, 40)), [size - 1]]).astype(np.int64)
    return {
        "pairwise_distance": (pts, pts),
        "poisson_binomial_pmf": (probs,),
        "poisson_binomial_tail": (probs, len(probs) // 2),
        "path_cost": (seq, travel),
        "best_two_opt": (seq, travel),
        "insertion_deltas": (seq, 41, travel),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=400, help="number of points")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':24s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}  equal")
    for name, call_args in cases(args.size, rng).items():
        f_np = getattr(kernels, name + "_np")
        f_nb = getattr(kernels, name + "_nb")
        equal = same(f_np(*call_args), f_nb(*call_args))  # also warms up numba
        number = max(1, int(0.2 / max(timeit.timeit(lambda: f_np(*call_args), number=1), 1e-6)))
        t_np = min(timeit.repeat(lambda: f_np(*call_args), number=number, repeat=args.repeat)) / number
        t_nb = min(timeit.repeat(lambda: f_nb(*call_args), number=number, repeat=args.repeat)) / number
        print(f"{name:24s} {1e3 * t_np:10.4f} {1e3 * t_nb:10.4f} {t_np / t_nb:8.1f}  {equal}")


if __name__ == "__main__":
    main()
