"""Time the compiled and pure-Python kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
from __future__ import annotations

import argparse
import math
import timeit

import numpy as np

from reliakit import kernels


def cases(rng: np.random.Generator):
    stream = np.r_[rng.normal(size=50_000), rng.normal(size=50_000) + 0.5]
    ref = rng.normal(size=(2000, 8))
    queries = rng.normal(size=(1000, 8))
    cost = rng.random((60, 60))
    return {
        "page_hinkley_scan (100k values)":
            lambda k: k.page_hinkley_scan(stream, 0.05, math.inf, 0, 0.0, 0.0, math.inf),
        "kth_neighbor_distance (2000x1000, d=8)":
            lambda k: k.kth_neighbor_distance(ref, queries, 10),
        "linear_assignment (60x60)":
            lambda k: k.linear_assignment(cost),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    rng = np.random.default_rng(0)
    print(f"{'kernel':42s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases(rng).items():
        times = []
        for b in backends:
            mod = kernels.get_backend(b)
            fn(mod)  # warm up
            times.append(min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)))
        row = f"{name:42s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) > 1:
            row += f"{times[1] / times[0]:11.1f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
