"""Time the compiled and numpy kernel backends on W1-sized problems.

    python3 benchmarks/bench_assignment.py --sizes 64 128 256 512 --repeat 3
"""

import argparse
import time

import numpy as np

from reprokit import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256, 512])
    parser.add_argument("--dim", type=int, default=10)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    mods = kernels.backends()
    rng = np.random.default_rng(args.seed)
    print(f"{'n':>5} {'backend':>8} {'pairwise_s':>11} {'assign_s':>10} {'cost':>12}")
    for n in args.sizes:
        a, b = rng.normal(size=(n, args.dim)), rng.normal(size=(n, args.dim))
        costs = {}
        for name, mod in sorted(mods.items()):
            t_pair = best_of(lambda: mod.pairwise_euclidean(a, b), args.repeat)
            cost = mod.pairwise_euclidean(a, b)
            t_assign = best_of(lambda: mod.linear_assignment(cost), args.repeat)
            cols = mod.linear_assignment(cost)
            costs[name] = cost[np.arange(n), cols].sum() / n
            print(f"{n:>5} {name:>8} {t_pair:>11.5f} {t_assign:>10.5f} {costs[name]:>12.6f}")
        if len(costs) == 2 and abs(costs["cython"] - costs["python"]) > 1e-9:
            raise SystemExit(f"backends disagree at n={n}: {costs}")


if __name__ == "__main__":
    main()
