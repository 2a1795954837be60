"""Time the numba and numpy implementations of every loop kernel.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Both backends are called on identical inputs, outputs are checked for
equality, and the best-of-N wall time per call is reported.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from hetskel import kernels


def cases(rng):
    T, K, M = 64, 34, 1
    joints = rng.normal(size=(T, K, M, 3))
    parent = np.concatenate([[0], rng.integers(0, np.arange(1, K))])
    valid = rng.random((K, M)) < 0.8
    x = rng.normal(size=(64, 34, 32))
    group = np.arange(34) % 4
    g = rng.normal(size=(64, 4, 32))
    _, idx = kernels.NUMPY_IMPLS["group_max"](x, group, 4)
    n, k = 400, 40
    cent = rng.normal(size=(k, 8))
    pts = rng.normal(size=(n, 8))
    d = ((pts[:, None] - cent[None]) ** 2).sum(-1)
    order = np.argsort(d, axis=None, kind="stable").astype(np.int64)
    return {
        "resample_time": (rng.normal(size=(50, K * M * 3)), 64),
        "bone_motion": (joints, parent.astype(np.int64), valid),
        "group_max": (x, group.astype(np.int64), 4),
        "group_max_backward": (g, idx, 34),
        "balanced_assign": (order, n, k),
    }


def best_time(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t)
    return best


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args(argv)
    if not kernels.NUMBA_IMPLS:
        print("numba unavailable; only the numpy backend exists")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20} {'numpy (us)':>12} {'numba (us)':>12} {'speedup':>8}  equal")
    for name, call_args in cases(rng).items():
        npy, nb = kernels.NUMPY_IMPLS[name], kernels.NUMBA_IMPLS[name]
        nb(*call_args)  # compile
        ok = same(npy(*call_args), nb(*call_args))
        t_np = best_time(npy, call_args, args.repeat)
        t_nb = best_time(nb, call_args, args.repeat)
        print(f"{name:<20} {1e6 * t_np:12.1f} {1e6 * t_nb:12.1f} {t_np / t_nb:8.2f}  {ok}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
