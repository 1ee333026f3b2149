#!/usr/bin/env python3
"""Throughput comparison of the two grid-walk kernels.

The lazy Metropolis walk ships with a pure-Python step kernel and an
optional compiled one; both consume an identical uniform stream, so a run
is bit-reproducible on either.  This script times raw kernel throughput on
fully evaluated score tables of several sizes, checks that the two engines
land on the same cell, and finishes with one end-to-end mechanism call per
engine (exercising the lazy-evaluation fault path) that must return
bit-identical outputs.

Usage:
    python3 benchmarks/walk_benchmark.py [--steps N] [--seed S]
"""

import argparse
import time

import numpy as np

from dpbilevel.gridwalk.engine import available_engines, run_walk
from dpbilevel.gridwalk.grid import grid_with_cells
from dpbilevel.instances import make_instance
from dpbilevel.mechanisms import exponential_mechanism
from dpbilevel.problem import Domain
from dpbilevel.rng import make_generator

GRIDS = (
    ("1-d / 1024 cells", 1, 1024),
    ("2-d / 64^2 cells", 2, 64),
    ("2-d / 512^2 cells", 2, 512),
)


def smooth_scores(grid):
    centers = grid.centers_all()
    return (1.5 * np.sin(2.0 * centers[:, 0])
            + 0.8 * np.einsum("ij,ij->i", centers, centers))


def time_engine(table, grid, steps, seed, engine):
    start = grid.state_count // 2
    rng = make_generator(seed)
    t0 = time.perf_counter()
    result = run_walk(table, grid, steps, rng, start, engine=engine)
    return result.state, time.perf_counter() - t0


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=1_000_000,
                        help="walk steps per timed run (default 1e6)")
    parser.add_argument("--seed", type=int, default=20260816,
                        help="seed for the shared uniform stream")
    args = parser.parse_args()

    engines = available_engines()
    print(f"engines available: {', '.join(engines)}")
    if "compiled" not in engines:
        print("compiled kernel not built - timing the python kernel only")

    print(f"\nraw kernel throughput ({args.steps:,} steps per run)")
    header = f"{'grid':<20} " + " ".join(f"{e:>14}" for e in engines)
    print(header + f" {'speedup':>9}  same endpoint")
    for label, d, cells in GRIDS:
        domain = Domain("box", np.zeros(d), half_widths=np.ones(d))
        grid = grid_with_cells(domain, cells)
        table = smooth_scores(grid)
        states, rates = [], []
        for engine in engines:
            state, elapsed = time_engine(table, grid, args.steps,
                                         args.seed, engine)
            states.append(state)
            rates.append(args.steps / elapsed)
        row = f"{label:<20} " + " ".join(f"{r:>11,.0f}/s" for r in rates)
        if len(rates) == 2:
            row += f" {rates[1] / rates[0]:>8.1f}x"
        else:
            row += f" {'-':>9}"
        row += f"  {'yes' if len(set(states)) == 1 else 'NO'}"
        print(row)
        if len(set(states)) != 1:
            raise SystemExit("engine endpoints diverged - kernels are broken")

    print("\nend-to-end mechanism call (lazy evaluation, forced walk)")
    fx = make_instance("quadratic", d_x=1, d_y=2, seed=0)
    Z = fx.sample_dataset(12, seed=1)
    outputs = {}
    for engine in engines:
        t0 = time.perf_counter()
        res = exponential_mechanism(fx.problem, Z, fx.constants, 1.0, 1.0,
                                    rng=args.seed, force_walk=True,
                                    engine=engine)
        elapsed = time.perf_counter() - t0
        outputs[engine] = res.x_out
        print(f"  {engine:<9} {elapsed * 1e3:>9.1f} ms   x_out = {res.x_out}")
    values = list(outputs.values())
    if all(np.array_equal(values[0], v) for v in values[1:]):
        print("  mechanism outputs bit-identical across engines")
    else:
        raise SystemExit("mechanism outputs differ across engines")


if __name__ == "__main__":
    main()
