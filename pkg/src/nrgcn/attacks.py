"""DICE structural attacks: delete same-class edges, optionally connect across classes.

Evasion perturbs the graph seen at test time (targets: test nodes);
poisoning perturbs the training graph (targets: train nodes).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .graph import Graph, SplitMasks

MODES = ("evasion", "poisoning")


class Edit(NamedTuple):
    op: str      # "DEL" or "ADD"
    u: int       # u < v
    v: int
    target: int  # node whose budget paid for the edit


@dataclass(frozen=True)
class AttackSpec:
    mode: str = "evasion"
    T: int = 1
    insert_external: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.T < 0:
            raise ValueError("T must be >= 0")

    def targets(self, splits: SplitMasks) -> np.ndarray:
        return splits.test if self.mode == "evasion" else splits.train


def apply_dice(g: Graph, labels, splits: SplitMasks, spec: AttackSpec, rng=None):
    """Perturb ``g`` around the target nodes of ``spec``.

    Targets are visited in shuffled order. Each removes up to ``T`` of its
    currently present same-class edges; an edge already removed through an
    earlier target is gone and does not count again. With
    ``insert_external`` each target also gains up to ``T`` edges to random
    different-class non-neighbors.

    Returns the attacked graph and the edit log, a list of ``Edit``.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    log: list[Edit] = []
    if spec.T == 0:
        return g, log

    adj: dict[int, set[int]] = {}

    def nbrs(v):
        if v not in adj:
            adj[v] = set(g.neighbors(v).tolist())
        return adj[v]

    for u in rng.permutation(spec.targets(splits)).tolist():
        same = sorted(w for w in nbrs(u) if labels[w] == labels[u])
        k = min(spec.T, len(same))
        for w in sorted(rng.choice(same, size=k, replace=False).tolist()) if k else []:
            nbrs(u).discard(w)
            nbrs(w).discard(u)
            log.append(Edit("DEL", min(u, w), max(u, w), u))
        if spec.insert_external:
            pool = np.flatnonzero(labels != labels[u])
            pool = pool[~np.isin(pool, list(nbrs(u)))]
            k = min(spec.T, len(pool))
            for w in sorted(rng.choice(pool, size=k, replace=False).tolist()) if k else []:
                nbrs(u).add(w)
                nbrs(w).add(u)
                log.append(Edit("ADD", min(u, w), max(u, w), u))

    edges = {tuple(e) for e in g.edge_array().tolist()}
    for op, u, v, _ in log:
        if op == "DEL":
            edges.discard((u, v))
        else:
            edges.add((u, v))
    return Graph.from_edges(g.num_nodes, sorted(edges)), log


def format_edit_log(log) -> str:
    """One ``DEL u v`` / ``ADD u v`` line per edit."""
    return "".join(f"{e[0]} {e[1]} {e[2]}\n" for e in log)


def write_edit_log(log, path) -> None:
    Path(path).write_text(format_edit_log(log), encoding="utf-8")


def run_attack_experiment(bundle, plan, model_config, spec: AttackSpec, sampling_seed: int = 0,
                          cache_dir=None, backend=None, num_threads: int = 0) -> float:
    """Test accuracy under one attack setting.

    Evasion trains on the clean graph and evaluates on a tensor rebuilt from
    the attacked graph. Poisoning trains on the attacked graph and evaluates
    on the clean graph's tensor. Both tensors use ``sampling_seed``.
    """
    return attack_run(bundle, plan, model_config, spec, sampling_seed, cache_dir, backend, num_threads)["accuracy"]


def attack_run(bundle, plan, model_config, spec: AttackSpec, sampling_seed: int = 0,
               cache_dir=None, backend=None, num_threads: int = 0) -> dict:
    from .experiment import get_tensor
    from .model import evaluate, init_params, train

    attacked, log = apply_dice(bundle.graph, bundle.labels, bundle.splits, spec)
    tensor_args = dict(cache_dir=cache_dir, backend=backend, num_threads=num_threads)
    clean, _ = get_tensor(bundle.graph, bundle.features, plan, sampling_seed, **tensor_args)
    perturbed = clean if not log else get_tensor(attacked, bundle.features, plan, sampling_seed, **tensor_args)[0]
    train_tensor, test_tensor = (clean, perturbed) if spec.mode == "evasion" else (perturbed, clean)

    params = init_params(bundle.feature_dim, model_config.hidden, bundle.num_classes, plan.K + 1,
                         model_config.mlp_hidden, seed=model_config.init_seed)
    params, history = train(params, train_tensor, bundle.labels, bundle.splits, model_config, plan,
                            test_tensor=test_tensor)
    acc = evaluate(params, test_tensor, bundle.labels, bundle.splits.test, plan)
    return {"accuracy": acc, "edits": log, "history": history, "params": params}
