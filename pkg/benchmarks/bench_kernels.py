"""Compare the numpy and native attention kernels.

Times the three hot calls (context distance, decayed-softmax forward and
its backward) on training-shaped inputs and prints the speedup. Run from
an installed tree:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --batch 48 --heads 8 --lengths 50,100,200
"""

import argparse
import time

import numpy as np

from akt import kernels
from akt.attention import causal_mask


def make_case(batch, heads, length, rng):
    raw = rng.standard_normal((batch, heads, length, length))
    mask = np.broadcast_to(causal_mask(length), (batch, length, length)).copy()
    theta = rng.uniform(0.1, 2.0, heads)
    dist = kernels.context_distance(raw, mask)
    alpha = kernels.monotonic_weights_forward(raw, dist, theta, mask)
    grad = rng.standard_normal(alpha.shape)
    return raw, mask, theta, dist, alpha, grad


def timed(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench(batch, heads, length, repeats, rng):
    raw, mask, theta, dist, alpha, grad = make_case(batch, heads, length, rng)
    rows = {}
    for name in kernels.available_backends():
        kernels.use_backend(name)
        rows[name] = (
            timed(lambda: kernels.context_distance(raw, mask), repeats),
            timed(lambda: kernels.monotonic_weights_forward(
                raw, dist, theta, mask), repeats),
            timed(lambda: kernels.monotonic_weights_backward(
                raw, dist, theta, alpha, grad), repeats),
        )
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=24)
    parser.add_argument("--heads", type=int, default=8)
    parser.add_argument("--lengths", default="50,100,200",
                        help="comma-separated sequence lengths")
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    previous = kernels.backend_name()
    print(f"backends: {', '.join(kernels.available_backends())} "
          f"(default {previous})")
    header = f"{'T':>5}  {'kernel':<9}"
    names = kernels.available_backends()
    for name in names:
        header += f"  {name:>10}"
    if len(names) > 1:
        header += f"  {'speedup':>8}"
    print(header)
    try:
        for length in (int(v) for v in args.lengths.split(",")):
            rows = bench(args.batch, args.heads, length, args.repeats, rng)
            for i, kernel in enumerate(("distance", "weights", "backward")):
                line = f"{length if i == 0 else '':>5}  {kernel:<9}"
                for name in names:
                    line += f"  {rows[name][i] * 1e3:>8.2f}ms"
                if len(names) > 1:
                    line += f"  {rows['numpy'][i] / rows['native'][i]:>7.1f}x"
                print(line)
    finally:
        kernels.use_backend(previous)


if __name__ == "__main__":
    main()
