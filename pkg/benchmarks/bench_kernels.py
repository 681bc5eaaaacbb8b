"""Compiled vs pure-Python kernels, and indexed vs brute-force Chamfer.

    python benchmarks/bench_kernels.py [--repeat 3] [--json out.json]

The brute-force Chamfer time at 1e5 points is extrapolated from a slice of
queries; a linear scan costs the same for every query.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from octadepth import _pykernels, kernels, metrics, spatial
from octadepth.phantom import make_sample


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def bench_thinning(repeat):
    mask = np.ascontiguousarray(make_sample(0).seg_gt.bits)
    rows = []
    tables = kernels.GUO_HALL_TABLES
    impls = [("python", _pykernels)]
    if kernels.BACKEND == "cython":
        from octadepth import _kernels

        impls.insert(0, ("cython", _kernels))
    for name, mod in impls:
        rows.append({"kernel": "guo_hall 512x512", "backend": name,
                     "seconds": best_of(lambda: mod.lut_thin(mask, *tables), repeat)})
        rows.append({"kernel": "zhang_suen 512x512", "backend": name,
                     "seconds": best_of(lambda: mod.zhang_suen(mask), repeat)})
    return rows


def bench_kdtree(repeat, n=20000):
    rng = np.random.default_rng(0)
    pts, qs = rng.random((n, 3)), rng.random((n, 3))
    tree = spatial.KDTree(pts)
    rows = []
    impls = [("python", _pykernels)]
    if kernels.BACKEND == "cython":
        from octadepth import _kernels

        impls.insert(0, ("cython", _kernels))
    for name, mod in impls:
        rows.append({"kernel": f"kd query {n}x{n}", "backend": name,
                     "seconds": best_of(lambda: tree.query(qs, impl=mod), repeat)})
    return rows


def bench_chamfer(n=100_000, sample=2000):
    rng = np.random.default_rng(1)
    a, b = rng.random((n, 3)), rng.random((n, 3))
    t = time.perf_counter()
    metrics.chamfer(a, b)
    indexed = time.perf_counter() - t
    t = time.perf_counter()
    spatial.nearest_brute(b, a[:sample])
    brute = (time.perf_counter() - t) * (2 * n / sample)
    return {"n": n, "indexed_s": indexed, "brute_s_extrapolated": brute,
            "speedup": brute / indexed}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    rows = bench_thinning(args.repeat) + bench_kdtree(args.repeat)
    for r in rows:
        print(f"{r['kernel']:<22} {r['backend']:<7} {r['seconds'] * 1e3:10.1f} ms")
    ch = bench_chamfer()
    print(f"chamfer n={ch['n']}: indexed {ch['indexed_s']:.2f} s, "
          f"brute ~{ch['brute_s_extrapolated']:.0f} s, speedup {ch['speedup']:.0f}x")
    if args.json:
        with open(args.json, "w") as f:
            json.dump({"backend": kernels.BACKEND, "kernels": rows, "chamfer": ch}, f, indent=2)


if __name__ == "__main__":
    main()
