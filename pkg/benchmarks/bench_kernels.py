"""Compare the numba and numpy versions of the hot kernels.

Run with ``python3 benchmarks/bench_kernels.py [--repeat 5]``. Prints the
best wall time of each backend and the max difference between them.
"""

import argparse
import time

import numpy as np

from sbperfusion import _kernels


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(rng):
    theta = 2 * np.pi * np.arange(64) / 64
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    center = np.array([0.0, 0.0, 0.5])
    e1, e2 = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    src = np.column_stack([np.zeros(8000), np.zeros(8000), rng.uniform(0, 1, 8000)])
    targets = rng.normal(size=(2000, 3)) + [0, 0, 2]
    weights = rng.normal(size=8000)
    return {
        "ring_mean_inv_dist (64 x 8000)": lambda b: _kernels.ring_mean_inv_dist(
            center, e1, e2, 0.01, src, cos_t, sin_t, backend=b),
        "potential (2000 x 8000)": lambda b: _kernels.potential(targets, src, weights, backend=b),
        "potential_and_gradient (2000 x 8000)": lambda b: _kernels.potential_and_gradient(
            targets, src, weights, backend=b)[0],
    }


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, fn in cases(rng).items():
        fn("numba")  # compile outside the timing
        t_nb, out_nb = best_time(lambda: fn("numba"), args.repeat)
        t_np, out_np = best_time(lambda: fn("numpy"), args.repeat)
        diff = float(np.max(np.abs(out_nb - out_np)) / np.max(np.abs(out_np)))
        print(f"{name:40s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.2f} {diff:10.2e}")


if __name__ == "__main__":
    main()
