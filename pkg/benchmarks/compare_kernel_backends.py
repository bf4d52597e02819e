#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the pure-numpy fallback.

Times SDDMM and SpMM (forward and backward) on a synthetic power-law graph
for every available backend and prints a table with the speedups.

    python benchmarks/compare_kernel_backends.py --edges 2000000 --dim 128
"""

import argparse
import time

import numpy as np

from gnnrec import kernels as K
from gnnrec.datagen import powerlaw_bipartite


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def build_cases(g, dim, workers, rng):
    xu = rng.normal(size=(g.num_users, dim)).astype(np.float32)
    xi = rng.normal(size=(g.num_items, dim)).astype(np.float32)
    msgs = rng.normal(size=(g.num_edges, dim)).astype(np.float32)
    grad_i = rng.normal(size=(g.num_items, dim)).astype(np.float32)
    opts = K.KernelOptions(workers=workers)
    return {
        "sddmm mul": lambda: K.sddmm(g, xu, xi, "mul", opts),
        "sddmm dot": lambda: K.sddmm(g, xu, xi, "dot", opts),
        "spmm sum (edge)": lambda: K.spmm(g, msgs, "sum", opts, target="item"),
        "spmm sum (copy-src)": lambda: K.spmm(g, xu, "sum", opts,
                                              target="item", mode="copy_src"),
        "spmm max": lambda: K.spmm(g, msgs, "max", opts, target="item"),
        "sddmm backward": lambda: K.sddmm_backward(g, xu, xi, "mul", msgs, opts),
        "spmm backward": lambda: K.spmm_backward(g.view("item"), "sum",
                                                 grad_i, opts),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--users", type=int, default=50_000)
    parser.add_argument("--items", type=int, default=20_000)
    parser.add_argument("--edges", type=int, default=1_000_000)
    parser.add_argument("--dim", type=int, default=128)
    parser.add_argument("--workers", type=int, default=None,
                        help="threads per kernel (default: auto)")
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    g = powerlaw_bipartite(args.users, args.items, args.edges, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    workers = args.workers or K.default_workers()
    print(f"graph: {g.num_users} users x {g.num_items} items, "
          f"{g.num_edges} edges, dim {args.dim}, {workers} workers")
    backends = K.available_backends()   # sorted: cython first when built
    results = {}
    labels = []
    for name in backends:
        K.set_backend(name)
        cases = build_cases(g, args.dim, workers, rng)
        labels = list(cases)
        for label, fn in cases.items():
            fn()  # warm up
            results[(label, name)] = time_call(fn, args.repeats)

    header = f"{'kernel':24s}" + "".join(f"{b + ' (ms)':>16s}" for b in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10s}"
    print(header)
    print("-" * len(header))
    for label in labels:
        times = [results[(label, b)] for b in backends]
        row = f"{label:24s}" + "".join(f"{t * 1e3:16.2f}" for t in times)
        if len(backends) > 1:
            row += f"{times[-1] / times[0]:10.1f}x"
        print(row)


if __name__ == "__main__":
    main()
