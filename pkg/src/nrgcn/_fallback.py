"""Pure-Python sampling and aggregation kernels (reference for ``_kernels``)."""

import numpy as np

from .graph import Graph
from .rng import RandomSource
from .sampler import LayerSpec, SamplingPlan, multi_sample

NAME = "python"


def sample_all_raw(indptr, indices, roots, P, S, L, seed, exact_hop, num_threads=0):
    n = len(indptr) - 1
    g = Graph(n, np.array(indptr, dtype=np.int64), np.array(indices, dtype=np.int64))
    plan = SamplingPlan(tuple(LayerSpec(int(p), int(s), int(l)) for p, s, l in zip(P, S, L)), bool(exact_hop))
    R, M = len(roots), plan.num_slots
    parents = np.full((R, M, max(1, int(P.max()))), -1, dtype=np.int64)
    members = np.full((R, M, plan.max_subset), -1, dtype=np.int64)
    pcount = np.zeros((R, M), dtype=np.int32)
    mcount = np.zeros((R, M), dtype=np.int32)
    for r, root in enumerate(roots.tolist()):
        ss = multi_sample(g, root, plan, RandomSource.for_node(seed, root))
        for m, entry in enumerate(ss.entries):
            pcount[r, m] = len(entry.parents)
            parents[r, m, :len(entry.parents)] = entry.parents
            mcount[r, m] = len(entry.nodes)
            members[r, m, :len(entry.nodes)] = entry.nodes
    return parents, pcount, members, mcount


def aggregate_raw(features, members, counts, num_threads=0, dest=None):
    """Mean of member feature rows per slot, float64 sums, float32 output."""
    R, M, _ = members.shape
    out = dest
    if out is None:
        out = np.empty((R, M, features.shape[1]), dtype=np.float32)
    for r in range(R):
        for m in range(M):
            c = counts[r, m]
            if not c:
                out[r, m] = 0
            else:
                rows = features[members[r, m, :c]].astype(np.float64)
                out[r, m] = np.add.reduce(rows, axis=0) / c
    return out
