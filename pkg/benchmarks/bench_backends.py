"""Compiled versus pure-Python kernels on synthetic graphs.

    python benchmarks/bench_backends.py [--nodes 2000 5000] [--features 500] [--degree 4 20]

Checks that both backends produce bit-identical tensors, then prints
sampling and aggregation seconds for each.
"""

from __future__ import annotations

import argparse
import itertools
import time

from nrgcn import _backend
from nrgcn.datasets import make_synthetic
from nrgcn.graph import row_normalize
from nrgcn.sampler import MUL_PLAN, SIN_PLAN, sample_all


def best_of(fn, repeats):
    best, out = float("inf"), None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--nodes", type=int, nargs="+", default=[2000, 5000])
    ap.add_argument("--features", type=int, default=500)
    ap.add_argument("--degree", type=float, nargs="+", default=[4.0, 20.0])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--threads", type=int, default=0)
    args = ap.parse_args(argv)

    backends = _backend.available()
    if "cython" not in backends:
        print("compiled kernels not built; timing the Python fallback only")
    header = ["nodes", "degree", "plan"] + [f"{b}_{part}" for b in backends for part in ("sample", "aggregate")]
    if len(backends) > 1:
        header.append("speedup")
    print(",".join(header))

    for n, degree in itertools.product(args.nodes, args.degree):
        bundle = make_synthetic(num_nodes=n, feature_dim=args.features, avg_degree=degree, seed=0)
        x = row_normalize(bundle.features)
        for name, plan in (("MUL", MUL_PLAN), ("SIN", SIN_PLAN)):
            row, values, totals = [str(n), f"{degree:g}", name], [], []
            for b in backends:
                impl = _backend.get(b)
                ts, table = best_of(lambda: sample_all(bundle.graph, plan, 0, backend=b,
                                                       num_threads=args.threads), args.repeats)
                ta, tensor = best_of(lambda: impl.aggregate_raw(x, table.members, table.member_counts,
                                                                args.threads), args.repeats)
                row += [f"{ts:.4f}", f"{ta:.4f}"]
                values.append(tensor)
                totals.append(ts + ta)
            if any(v.tobytes() != values[0].tobytes() for v in values[1:]):
                raise SystemExit(f"backends disagree on N={n} degree={degree} plan={name}")
            if len(backends) > 1:
                row.append(f"{totals[backends.index('python')] / totals[backends.index('cython')]:.1f}x")
            print(",".join(row), flush=True)


if __name__ == "__main__":
    main()
