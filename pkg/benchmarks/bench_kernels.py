#!/usr/bin/env python3
"""Benchmark the compiled kernels against the NumPy fallback.

Times the three hot entry points (forward probabilities, fused loss+gradient,
Fisher diagonal) at the default experiment shape and a couple of others, and
checks that both backends agree numerically.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from fedledger import _kernels_py

try:
    from fedledger import _kernels
except ImportError:
    _kernels = None

SHAPES = (
    # (input_dim, hidden_dim, num_classes, batch)
    (16, 32, 10, 32),     # default experiment shape
    (16, 32, 10, 256),    # fisher-sized batch
    (64, 128, 10, 32),    # larger model
)


def make_case(input_dim, hidden, classes, batch, seed=0):
    rng = np.random.default_rng(seed)
    d = input_dim * hidden + hidden + hidden * classes + classes
    w = rng.uniform(-0.05, 0.05, d)
    x = rng.standard_normal((batch, input_dim))
    y = rng.integers(0, classes, batch)
    return w, x, y


def time_call(fn, *args, repeats):
    fn(*args)  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - start) / repeats


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=2000)
    args = parser.parse_args()

    if _kernels is None:
        print("compiled backend not built; showing NumPy timings only")

    header = f"{'shape':>18} {'kernel':>14} {'numpy us':>10} {'compiled us':>12} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for input_dim, hidden, classes, batch in SHAPES:
        w, x, y = make_case(input_dim, hidden, classes, batch)
        dims = (input_dim, hidden, classes)
        cases = (
            ("forward", (w, x, *dims), "forward_probs"),
            ("loss+grad", (w, x, y, *dims), "loss_and_grad"),
            ("fisher", (w, x, y, *dims), "fisher_diag"),
        )
        for label, call_args, name in cases:
            t_py = time_call(getattr(_kernels_py, name), *call_args, repeats=args.repeats)
            if _kernels is not None:
                t_cy = time_call(getattr(_kernels, name), *call_args, repeats=args.repeats)
                ref = getattr(_kernels_py, name)(*call_args)
                got = getattr(_kernels, name)(*call_args)
                ref0 = ref[1] if isinstance(ref, tuple) else ref
                got0 = got[1] if isinstance(got, tuple) else got
                assert np.allclose(ref0, got0, rtol=1e-9, atol=1e-14), f"{name} mismatch"
                print(f"{str((input_dim, hidden, classes, batch)):>18} {label:>14} "
                      f"{t_py * 1e6:>10.1f} {t_cy * 1e6:>12.1f} {t_py / t_cy:>8.2f}x")
            else:
                print(f"{str((input_dim, hidden, classes, batch)):>18} {label:>14} "
                      f"{t_py * 1e6:>10.1f} {'-':>12} {'-':>8}")


if __name__ == "__main__":
    main()
