"""Wall-clock comparison of the numba kernels and the pure-numpy fallback.

    python benchmarks/bench_backends.py [--repeats 3] [--json out.json]

Each workload runs once per backend to compile (numba) or warm caches,
then ``--repeats`` more times; the best time is reported.  The DES engine
is timed alongside on the same networks as the speed baseline.
"""

from __future__ import annotations

import argparse
import json
import math
import platform
import time

import numpy as np

from eulerq import __version__
from eulerq._accel import HAVE_NUMBA
from eulerq.euler import SimConfig, simulate_scheme
from eulerq.netmodel import NetworkSpec, NodeSpec, RoutingMatrix, single_node, tandem
from eulerq.purdep import generate_departure_batch


def layered(layers=10, width=10, servers=200, horizon=100.0):
    n = layers * width
    edges = [(l * width + a, (l + 1) * width + b, 0.09)
             for l in range(layers - 1) for a in range(width) for b in range(width)]
    lam = np.full(n, 16.0)
    lam[:width] = 160.0
    return NetworkSpec(tuple(NodeSpec.constant(1.0, servers, float(a)) for a in lam), RoutingMatrix(n, edges), horizon)


WORKLOADS = {
    "M/M/200 node, h=0.1, t=1000": (lambda: single_node(160.0, 200, 1.0, horizon=1000.0), 0.1),
    "tandem 2 x M/M/5, h=0.01, t=1000": (lambda: tandem(4.0, [5, 5], 1.0, horizon=1000.0), 0.01),
    "10x10 layered, m=200, h=0.1, t=100": (lambda: layered(), 0.1),
}


def best_of(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def run(repeats):
    backends = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]
    rows = []
    x = np.random.default_rng(0).integers(0, 400, size=100_000)
    for be in backends:
        rng = np.random.default_rng(1)
        # The batch sampler always uses the compiled path when numba is present;
        # the numpy column times the per-element Python loop it replaces.
        if be == "numba":
            t = best_of(lambda: generate_departure_batch(x, 200, 1.0, 0.1, rng), repeats)
        else:
            from eulerq.purdep import exact_departure
            f = getattr(exact_departure, "py_func", exact_departure)
            t = best_of(lambda: [f(rng, int(v), 200, 1.0, 0.1) for v in x[:10_000]], repeats) * 10
        rows.append({"workload": "100k pure-departure draws", "engine": f"sampler/{be}", "seconds": t})
    for name, (make, h) in WORKLOADS.items():
        spec = make()
        for scheme in ("backward", "forward", "des"):
            for be in backends:
                cfg = SimConfig(step=h, backend=be)
                t = best_of(lambda: simulate_scheme(spec, cfg, scheme), repeats)
                rows.append({"workload": name, "engine": f"{scheme}/{be}", "seconds": t})
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--json", help="also write the rows to this file")
    args = p.parse_args(argv)
    rows = run(args.repeats)
    print(f"eulerq {__version__}, python {platform.python_version()}, {platform.machine()}")
    print(f"{'workload':<36} {'engine':<16} {'seconds':>10} {'vs numpy':>9}")
    ref = {(r["workload"], r["engine"].split("/")[0]): r["seconds"] for r in rows if r["engine"].endswith("numpy")}
    for r in rows:
        base = ref.get((r["workload"], r["engine"].split("/")[0]))
        ratio = f"{base / r['seconds']:9.1f}" if base and not math.isclose(base, r["seconds"]) else f"{'':>9}"
        print(f"{r['workload']:<36} {r['engine']:<16} {r['seconds']:10.4f} {ratio}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
