"""Layer-independent multi-sampling of hop neighborhoods.

For hop ``l`` a draw picks up to ``P_l`` parents from the exact ``(l-1)``-hop
frontier of the root, takes the union of the parents' neighbor lists (the
localized node set, root excluded) and keeps up to ``L_l`` of those nodes.
Each hop repeats the draw ``S_l`` times with fresh parents. Hop 0 is always
the single subset ``[root]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, bfs_levels
from .rng import RandomSource


@dataclass(frozen=True)
class LayerSpec:
    P: int
    S: int
    L: int


@dataclass(frozen=True)
class SamplingPlan:
    """Per-hop ``(P, S, L)`` triples for hops 1..K.

    ``exact_hop`` restricts localized sets to the exact hop-``l`` frontier;
    by default the raw neighbor union is used.
    """

    layers: tuple[LayerSpec, ...]
    exact_hop: bool = False

    def __post_init__(self):
        layers = tuple(x if isinstance(x, LayerSpec) else LayerSpec(*x) for x in self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ValueError("sampling plan needs at least one hop layer")
        for l, spec in enumerate(layers, 1):
            if min(spec.P, spec.S, spec.L) < 1:
                raise ValueError(f"layer {l}: P, S, L must all be >= 1, got {spec}")
        if layers[0].P != 1:
            raise ValueError("layer 1 parent size must be 1 (the parent set is the root)")

    @classmethod
    def from_config(cls, layers, exact_hop: bool = False) -> "SamplingPlan":
        return cls(tuple(LayerSpec(int(d["P"]), int(d["S"]), int(d["L"])) for d in layers), exact_hop)

    def to_config(self) -> list[dict]:
        return [{"P": x.P, "S": x.S, "L": x.L} for x in self.layers]

    @property
    def K(self) -> int:
        return len(self.layers)

    @property
    def repeats(self) -> list[int]:
        """``[S_0, S_1, ..., S_K]`` with ``S_0 = 1``."""
        return [1] + [x.S for x in self.layers]

    @property
    def num_slots(self) -> int:
        return sum(self.repeats)

    @property
    def slot_hops(self) -> np.ndarray:
        """Hop index of every slot, in slot order."""
        return np.repeat(np.arange(self.K + 1), self.repeats)

    @property
    def slot_index(self) -> dict[tuple[int, int], int]:
        """``(hop, repeat)`` -> slot position; repeats count from 1."""
        out, pos = {}, 0
        for l, s in enumerate(self.repeats):
            for i in range(1, s + 1):
                out[(l, i)] = pos
                pos += 1
        return out

    def layer(self, l: int) -> LayerSpec:
        return self.layers[l - 1]

    @property
    def max_parents(self) -> int:
        return max(x.P for x in self.layers)

    @property
    def max_subset(self) -> int:
        return max(1, max(x.L for x in self.layers))

    def with_layer(self, l: int, **changes) -> "SamplingPlan":
        layers = list(self.layers)
        old = layers[l - 1]
        layers[l - 1] = LayerSpec(changes.get("P", old.P), changes.get("S", old.S), changes.get("L", old.L))
        return SamplingPlan(tuple(layers), self.exact_hop)


# Experiment plans for citation-scale graphs.
MUL_PLAN = SamplingPlan((LayerSpec(1, 5, 3), LayerSpec(2, 5, 5)))
SIN_PLAN = SamplingPlan((LayerSpec(1, 1, 5), LayerSpec(5, 1, 25)))


@dataclass(frozen=True)
class SampleEntry:
    hop: int
    repeat: int
    parents: tuple[int, ...]
    nodes: tuple[int, ...]


@dataclass(frozen=True)
class SampleSet:
    root: int
    entries: tuple[SampleEntry, ...]

    def subsets(self, hop: int) -> list[tuple[int, ...]]:
        return [e.nodes for e in self.entries if e.hop == hop]


def sample_parents(g: Graph, root: int, l: int, plan: SamplingPlan, rng: RandomSource,
                   levels: list[list[int]] | None = None) -> list[int]:
    """Parents for hop ``l``: the root for ``l = 1``, else a uniform draw from the
    exact ``(l-1)``-hop frontier, clamped to its size."""
    if l < 1:
        raise ValueError("hop must be >= 1")
    if l == 1:
        return [root]
    if levels is None:
        levels = bfs_levels(g, root, l - 1)
    return rng.sample(levels[l - 1], plan.layer(l).P)


def localized_node_set(g: Graph, parents, root: int | None = None, restrict_to=None) -> list[int]:
    """Sorted union of the parents' neighbor lists, without ``root``."""
    out = set()
    for p in parents:
        out.update(g.neighbors(p).tolist())
    out.discard(root)
    if restrict_to is not None:
        out &= set(restrict_to)
    return sorted(out)


def _draw(g, root, l, plan, rng, levels):
    parents = sample_parents(g, root, l, plan, rng, levels)
    pool = localized_node_set(g, parents, root, levels[l] if plan.exact_hop else None)
    return parents, rng.sample(pool, plan.layer(l).L)


def _levels_for(g, root, plan):
    return bfs_levels(g, root, plan.K if plan.exact_hop else plan.K - 1) + [[]]


def sample_layer(g: Graph, root: int, l: int, plan: SamplingPlan, rng: RandomSource) -> list[int]:
    """One hop-``l`` subset: fresh parents, localized set, then ``L_l`` nodes."""
    return _draw(g, root, l, plan, rng, _levels_for(g, root, plan))[1]


def multi_sample(g: Graph, root: int, plan: SamplingPlan, rng: RandomSource) -> SampleSet:
    levels = _levels_for(g, root, plan)
    entries = [SampleEntry(0, 1, (), (root,))]
    for l in range(1, plan.K + 1):
        for i in range(1, plan.layer(l).S + 1):
            parents, nodes = _draw(g, root, l, plan, rng, levels)
            entries.append(SampleEntry(l, i, tuple(parents), tuple(nodes)))
    return SampleSet(root, tuple(entries))


@dataclass(eq=False)
class SampleTable:
    """Fixed-shape record of every root's SampleSet.

    ``members[r, m, :member_counts[r, m]]`` is slot ``m`` of root ``roots[r]``;
    unused entries hold -1. ``parents`` is laid out the same way.
    """

    plan: SamplingPlan
    seed: int
    roots: np.ndarray
    parents: np.ndarray
    parent_counts: np.ndarray
    members: np.ndarray
    member_counts: np.ndarray
    backend: str = field(default="")

    def sample_set(self, r: int) -> SampleSet:
        entries = []
        for (l, i), m in self.plan.slot_index.items():
            entries.append(SampleEntry(
                l, i,
                tuple(self.parents[r, m, :self.parent_counts[r, m]].tolist()),
                tuple(self.members[r, m, :self.member_counts[r, m]].tolist()),
            ))
        return SampleSet(int(self.roots[r]), tuple(entries))


def sample_all(g: Graph, plan: SamplingPlan, seed: int, roots=None, backend: str | None = None,
               num_threads: int = 0) -> SampleTable:
    """Sample every root with its own derived stream (see ``RandomSource.for_node``)."""
    from . import _backend

    impl = _backend.get(backend)
    roots = np.arange(g.num_nodes, dtype=np.int64) if roots is None else np.ascontiguousarray(roots, dtype=np.int64)
    P = np.array([x.P for x in plan.layers], dtype=np.int64)
    S = np.array([x.S for x in plan.layers], dtype=np.int64)
    L = np.array([x.L for x in plan.layers], dtype=np.int64)
    parents, pcount, members, mcount = impl.sample_all_raw(
        g.indptr, g.indices, roots, P, S, L, seed, plan.exact_hop, num_threads)
    return SampleTable(plan, seed, roots, parents, pcount, members, mcount, impl.NAME)
