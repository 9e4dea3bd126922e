"""Compiled vs pure-Python kernel timings.

Usage: python3 benchmarks/bench_kernels.py [--solves 100] [--scans 2000] [--seed 0]

Times full MPC solves (horizon 5, 0-3 keep-outs) and prey grid scans on
identical random inputs with each backend, and checks the results agree.
"""
from __future__ import annotations

import argparse
import math
import statistics
import time

import numpy as np

from roimpc import kernels
from roimpc.controllers import MpcWeights, tracking_problem
from roimpc.environment import layout
from roimpc.prey import PreyHeuristicConfig
from roimpc.solver import solve


def problems(n: int, seed: int):
    rng = np.random.default_rng(seed)
    cfg, w = layout(2), MpcWeights()
    out = []
    for _ in range(n):
        r = 0.8 * cfg.r_world * math.sqrt(rng.uniform())
        a = rng.uniform(0, 2 * math.pi)
        x = np.array([r * math.cos(a), r * math.sin(a), *rng.uniform(-1, 1, 2)])
        others = [x[:2] + rng.uniform(-6, 6, 2)]
        obstacles = [x[:2] + rng.uniform(-6, 6, 2) for _ in range(int(rng.integers(0, 3)))]
        out.append(tracking_problem(x, x[:2] + rng.uniform(-10, 10, 2), others, obstacles, w, cfg))
    return out


def scans(n: int, seed: int):
    rng = np.random.default_rng(seed)
    h = PreyHeuristicConfig()
    radii = h.candidate_max_radius * np.arange(1, h.n_radii + 1) / h.n_radii
    ang = 2 * np.pi * np.arange(h.n_angles) / h.n_angles
    return [(float(p[0]), float(p[1]), np.ascontiguousarray(rng.uniform(-20, 20, (2, 2))), radii,
             np.cos(ang), np.sin(ang), 20.0) for p in rng.uniform(-15, 15, (n, 2))]


def timed(fn, items):
    times, results = [], []
    for it in items:
        t0 = time.perf_counter()
        results.append(fn(it))
        times.append(time.perf_counter() - t0)
    return times, results


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--solves", type=int, default=100)
    ap.add_argument("--scans", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    names = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    if len(names) == 1:
        print("compiled extension not available; timing the Python backend only")
    probs, scan_args = problems(args.solves, args.seed), scans(args.scans, args.seed)
    rows, out = [], {}
    for name in names:
        kb = kernels.get_backend(name)
        ts, sols = timed(lambda p: solve(p, backend=kb), probs)
        tp, res = timed(lambda a: kb.prey_scan(*a), scan_args)
        out[name] = (sols, res)
        rows.append((name, 1e3 * statistics.median(ts), 1e3 * sum(ts), 1e6 * statistics.median(tp)))
    print(f"{'backend':<8} {'solve median ms':>16} {'solve total ms':>15} {'scan median us':>15}")
    for r in rows:
        print(f"{r[0]:<8} {r[1]:>16.3f} {r[2]:>15.1f} {r[3]:>15.2f}")
    if len(rows) == 2:
        print(f"speed-up: solve x{rows[0][2] / rows[1][2]:.1f}, scan x{rows[0][3] / rows[1][3]:.1f}")
        same = all(np.array_equal(a.controls, b.controls) for a, b in zip(out["python"][0], out["cython"][0]))
        same &= all(a == b for a, b in zip(out["python"][1], out["cython"][1]))
        print(f"results bitwise identical: {same}")


if __name__ == "__main__":
    main()
