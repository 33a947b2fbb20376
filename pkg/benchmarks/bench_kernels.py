"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from reluverify import kernels
from reluverify.bounds import SplitSet, interval_bounds, propagate
from reluverify.model import InputRegion, random_network
from reluverify.oracle.lp import build_triangle_lp
from reluverify.oracle.simplex import simplex_solve


def backward_case(dims, seed=0):
    rng = np.random.default_rng(seed)
    net = random_network(dims, rng)
    region = InputRegion(rng.normal(size=dims[0]), 0.3)
    bounds = interval_bounds(net, region)
    splits = SplitSet.empty(net)
    alpha = [rng.uniform(0, 1, d) for d in net.hidden_dims]
    beta = [np.zeros(d) for d in net.hidden_dims]

    def run(backend):
        return propagate(net, bounds, splits, alpha, beta, np.ones(1), None, region,
                         need_grad=True, backend=backend)
    return run


def intermediate_case(dims, seed=0):
    rng = np.random.default_rng(seed)
    net = random_network(dims, rng)
    region = InputRegion(rng.normal(size=dims[0]), 0.3)
    bounds = interval_bounds(net, region)
    splits = SplitSet.empty(net)
    layer = len(dims) - 2
    rows = np.eye(dims[layer])

    def run(backend):
        return propagate(net, bounds, splits, None, None, rows, layer, region, backend=backend)
    return run


def simplex_case(dims, seed=0):
    rng = np.random.default_rng(seed)
    net = random_network(dims, rng)
    region = InputRegion(rng.normal(size=dims[0]), 0.5)
    lp, _ = build_triangle_lp(net, region, interval_bounds(net, region))

    def run(backend):
        return simplex_solve(lp, backend=backend)
    return run


CASES = [
    ("backward+grad 2-8-8-1", backward_case([2, 8, 8, 1])),
    ("backward+grad 10-50-50-50-1", backward_case([10, 50, 50, 50, 1])),
    ("layer bounds 10-50-50-50-1", intermediate_case([10, 50, 50, 50, 1])),
    ("triangle LP simplex 3-8-8-1", simplex_case([3, 8, 8, 1])),
    ("triangle LP simplex 5-20-20-1", simplex_case([5, 20, 20, 1])),
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    names = sorted(kernels.BACKENDS)
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(names)}")
    if "compiled" not in names:
        print("compiled extension not built; only the fallback is timed")
    header = f"{'case':34s}" + "".join(f"{n + ' (ms)':>16s}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    for label, run in CASES:
        times = {}
        for name in names:
            number = max(1, int(0.2 / max(timeit.timeit(lambda: run(name), number=1), 1e-6)))
            best = min(timeit.repeat(lambda: run(name), number=number, repeat=args.repeat))
            times[name] = 1e3 * best / number
        line = f"{label:34s}" + "".join(f"{times[n]:16.3f}" for n in names)
        if len(names) == 2:
            line += f"{times['python'] / times['compiled']:9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
