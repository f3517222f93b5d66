"""Bundle producers: Planetoid raw-file conversion and a synthetic citation-like generator."""

from __future__ import annotations

import pickle
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import Bundle, Graph, SplitMasks

PLANETOID_NAMES = ("cora", "citeseer", "pubmed")


def _load_pickle(path: Path):
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def load_planetoid(raw_dir, name: str, split: str = "full") -> Bundle:
    """Read the ``ind.<name>.*`` files of the Planetoid distribution.

    ``split="full"`` trains on every labeled node outside the 500 validation
    and 1000 test nodes (the usual fully-supervised protocol for sampling
    GCNs); ``split="public"`` keeps the 20-per-class training set.
    """
    raw = Path(raw_dir)
    name = name.lower()
    parts = {}
    for key in ("x", "y", "tx", "ty", "allx", "ally", "graph"):
        path = raw / f"ind.{name}.{key}"
        if not path.is_file():
            raise FileNotFoundError(f"missing Planetoid file {path}")
        parts[key] = _load_pickle(path)
    test_index = [int(s) for s in (raw / f"ind.{name}.test.index").read_text().split()]

    test_sorted = np.sort(test_index)
    tx, ty = sp.csr_matrix(parts["tx"]), np.asarray(parts["ty"])
    if name == "citeseer":
        # isolated test nodes are absent from tx/ty; pad with zero rows
        full = np.arange(test_sorted.min(), test_sorted.max() + 1)
        rows = test_sorted - test_sorted.min()
        place = sp.csr_matrix((np.ones(len(rows)), (rows, np.arange(len(rows)))), shape=(len(full), len(rows)))
        tx = (place @ tx).tocsr()
        ty_ext = np.zeros((len(full), ty.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        ty = ty_ext

    features = sp.vstack([sp.csr_matrix(parts["allx"]), tx]).tolil()
    onehot = np.vstack([np.asarray(parts["ally"]), ty])
    features[test_index, :] = features[test_sorted, :]
    onehot[test_index, :] = onehot[test_sorted, :]
    features = np.asarray(features.todense(), dtype=np.float32)

    n = features.shape[0]
    labels = onehot.argmax(axis=1).astype(np.int64)
    labeled = onehot.sum(axis=1) > 0
    edges = [(u, v) for u, nbrs in parts["graph"].items() for v in nbrs if u < n and v < n]
    graph = Graph.from_edges(n, edges)

    num_y = np.asarray(parts["y"]).shape[0]
    num_ally = np.asarray(parts["ally"]).shape[0]
    test = np.asarray(test_index, dtype=np.int64)
    if split == "full":
        train = np.arange(num_ally - 500)
        val = np.arange(num_ally - 500, num_ally)
    elif split == "public":
        train = np.arange(num_y)
        val = np.arange(num_y, num_y + 500)
    else:
        raise ValueError(f"unknown split {split!r}")
    train = train[labeled[train]]
    return Bundle(graph, features, labels, SplitMasks(train, val, test), int(onehot.shape[1]))


def make_synthetic(num_nodes: int = 600, num_classes: int = 4, feature_dim: int = 200, avg_degree: float = 4.0,
                   homophily: float = 0.8, words_per_node: int = 12, signal: float = 0.5,
                   val_frac: float = 0.15, test_frac: float = 0.3, seed: int = 0) -> Bundle:
    """Stochastic-block graph with bag-of-words features.

    Each class owns a block of the vocabulary; a node's words come from its
    class block with probability ``signal`` and from the whole vocabulary
    otherwise. A fraction ``homophily`` of edges joins same-class nodes.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=num_nodes)
    by_class = [np.flatnonzero(labels == c) for c in range(num_classes)]

    num_edges = int(round(num_nodes * avg_degree / 2))
    src = rng.integers(0, num_nodes, size=num_edges)
    same = rng.random(num_edges) < homophily
    dst = np.empty(num_edges, dtype=np.int64)
    for i, (u, s) in enumerate(zip(src, same)):
        if s and len(by_class[labels[u]]) > 1:
            dst[i] = rng.choice(by_class[labels[u]])
        else:
            dst[i] = rng.integers(0, num_nodes)
    graph = Graph.from_edges(num_nodes, np.stack([src, dst], axis=1))

    block = max(1, feature_dim // num_classes)
    features = np.zeros((num_nodes, feature_dim), dtype=np.float32)
    for v in range(num_nodes):
        own = rng.random(words_per_node) < signal
        words = np.where(own, labels[v] * block + rng.integers(0, block, size=words_per_node),
                         rng.integers(0, feature_dim, size=words_per_node))
        features[v, np.minimum(words, feature_dim - 1)] = 1.0

    order = rng.permutation(num_nodes)
    n_test = int(round(test_frac * num_nodes))
    n_val = int(round(val_frac * num_nodes))
    splits = SplitMasks(np.sort(order[n_test + n_val:]), np.sort(order[n_test:n_test + n_val]),
                        np.sort(order[:n_test]))
    return Bundle(graph, features, labels.astype(np.int64), splits, num_classes)
