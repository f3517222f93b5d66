"""Graph bundles, compressed adjacency storage and hop frontiers.

A bundle is a directory with five files::

    meta.json      {"num_nodes": N, "feature_dim": F, "num_classes": C}
    edges.txt      one "u v" pair per line
    features.bin   little-endian float32, row-major N x F, no header
    labels.txt     one class index per line, line i = node i
    splits.json    {"train": [...], "val": [...], "test": [...]}

An optional ``node_ids.txt`` maps dense node IDs (line number) to external IDs.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

REQUIRED_FILES = ("meta.json", "edges.txt", "features.bin", "labels.txt", "splits.json")


class BundleError(ValueError):
    """Raised for unreadable or inconsistent bundle contents."""

    def __init__(self, filename: str, message: str, line: int | None = None):
        self.filename = filename
        self.line = line
        where = f"{filename}:{line}" if line is not None else filename
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected binary graph in CSR form.

    ``indices[indptr[v]:indptr[v + 1]]`` is the sorted neighbor list of ``v``.
    """

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    undirected: bool = True

    def __post_init__(self):
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)

    @classmethod
    def from_edges(cls, num_nodes: int, edges) -> "Graph":
        """Build a graph from an iterable or (E, 2) array of node pairs.

        Edges are symmetrized, deduplicated and self-loops are dropped.
        """
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= num_nodes):
            raise ValueError("edge endpoint out of range")
        e = e[e[:, 0] != e[:, 1]]
        both = np.concatenate([e, e[:, ::-1]], axis=0)
        if both.size:
            keys = np.unique(both[:, 0] * num_nodes + both[:, 1])
            src, dst = np.divmod(keys, num_nodes)
        else:
            src = dst = np.zeros(0, dtype=np.int64)
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=num_nodes), out=indptr[1:])
        return cls(num_nodes, indptr, np.ascontiguousarray(dst, dtype=np.int64))

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return len(self.indices) // 2

    def degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def edge_array(self) -> np.ndarray:
        """(E, 2) array of undirected edges with u < v, sorted."""
        src = np.repeat(np.arange(self.num_nodes, dtype=np.int64), np.diff(self.indptr))
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(u)
        i = np.searchsorted(nb, v)
        return bool(i < len(nb) and nb[i] == v)

    def content_hash(self) -> str:
        h = hashlib.md5()
        h.update(np.int64(self.num_nodes).tobytes())
        h.update(self.indptr.astype("<i8").tobytes())
        h.update(self.indices.astype("<i8").tobytes())
        return h.hexdigest()


def neighbors(g: Graph, v: int) -> list[int]:
    """Sorted 1-hop neighbors of ``v``."""
    return g.neighbors(v).tolist()


@dataclass(frozen=True)
class KHopFrontier:
    root: int
    hop: int
    members: tuple[int, ...]


def bfs_levels(g: Graph, root: int, max_hop: int) -> list[list[int]]:
    """Sorted exact-distance frontiers ``[hop0, hop1, ..., hop max_hop]``."""
    dist = {root: 0}
    levels = [[root]]
    queue = deque([root])
    while queue:
        u = queue.popleft()
        d = dist[u]
        if d == max_hop:
            continue
        for w in g.neighbors(u).tolist():
            if w not in dist:
                dist[w] = d + 1
                if len(levels) <= d + 1:
                    levels.append([])
                levels[d + 1].append(w)
                queue.append(w)
    levels += [[] for _ in range(max_hop + 1 - len(levels))]
    return [sorted(level) for level in levels]


def khop_frontier(g: Graph, v: int, l: int) -> KHopFrontier:
    """Nodes at shortest-path distance exactly ``l`` from ``v``."""
    if l < 0:
        raise ValueError("hop must be >= 0")
    return KHopFrontier(v, l, tuple(bfs_levels(g, v, l)[l]))


def row_normalize(features: np.ndarray) -> np.ndarray:
    """Scale every nonzero row to unit sum; zero rows stay zero.

    Sums are taken in float64; the result keeps the input dtype.
    """
    x = np.asarray(features, dtype=np.float64)
    sums = x.sum(axis=1, keepdims=True)
    sums[sums == 0] = 1.0
    dtype = features.dtype if np.issubdtype(features.dtype, np.floating) else np.float32
    return (x / sums).astype(dtype)


@dataclass(frozen=True)
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            object.__setattr__(self, name, arr)
        a, b, c = (set(self.train.tolist()), set(self.val.tolist()), set(self.test.tolist()))
        if a & b or a & c or b & c:
            raise ValueError("train/val/test splits overlap")


@dataclass(eq=False)
class Bundle:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    splits: SplitMasks
    num_classes: int
    external_ids: list[str] | None = field(default=None)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleError(path.name, f"invalid JSON: {exc.msg}", exc.lineno) from exc


def load_bundle(path) -> Bundle:
    """Read and validate a bundle directory."""
    root = Path(path)
    for name in REQUIRED_FILES:
        if not (root / name).is_file():
            raise BundleError(name, f"missing file in {root}")

    meta = _read_json(root / "meta.json")
    try:
        n, f, c = int(meta["num_nodes"]), int(meta["feature_dim"]), int(meta["num_classes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError("meta.json", f"bad or missing field: {exc}") from exc

    edges = []
    with open(root / "edges.txt", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise BundleError("edges.txt", f"expected 'u v', got {line.strip()!r}", lineno)
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise BundleError("edges.txt", f"non-integer node ID in {line.strip()!r}", lineno) from None
            if not (0 <= u < n and 0 <= v < n):
                raise BundleError("edges.txt", f"node ID out of range (N={n}): {u} {v}", lineno)
            edges.append((u, v))
    graph = Graph.from_edges(n, edges)

    raw = (root / "features.bin").read_bytes()
    if len(raw) != 4 * n * f:
        raise BundleError("features.bin", f"expected {4 * n * f} bytes for {n}x{f} float32, got {len(raw)}")
    features = np.frombuffer(raw, dtype="<f4").reshape(n, f).astype(np.float32)

    labels = []
    with open(root / "labels.txt", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            try:
                y = int(s)
            except ValueError:
                raise BundleError("labels.txt", f"non-integer label {s!r}", lineno) from None
            if not 0 <= y < c:
                raise BundleError("labels.txt", f"label out of range (C={c}): {y}", lineno)
            labels.append(y)
    if len(labels) != n:
        raise BundleError("labels.txt", f"expected {n} labels, got {len(labels)}")

    raw_splits = _read_json(root / "splits.json")
    parts = {}
    for key in ("train", "val", "test"):
        if key not in raw_splits:
            raise BundleError("splits.json", f"missing key {key!r}")
        ids = np.asarray(raw_splits[key], dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise BundleError("splits.json", f"node ID out of range in {key!r}")
        parts[key] = ids
    try:
        splits = SplitMasks(**parts)
    except ValueError as exc:
        raise BundleError("splits.json", str(exc)) from exc

    external_ids = None
    if (root / "node_ids.txt").is_file():
        external_ids = (root / "node_ids.txt").read_text(encoding="utf-8").split("\n")
        external_ids = [s for s in external_ids if s]
        if len(external_ids) != n:
            raise BundleError("node_ids.txt", f"expected {n} IDs, got {len(external_ids)}")

    return Bundle(graph, features, np.asarray(labels, dtype=np.int64), splits, c, external_ids)


def save_bundle(bundle: Bundle, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    g = bundle.graph
    meta = {"num_nodes": g.num_nodes, "feature_dim": int(bundle.features.shape[1]),
            "num_classes": int(bundle.num_classes)}
    (root / "meta.json").write_text(json.dumps(meta) + "\n", encoding="utf-8")
    with open(root / "edges.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{u} {v}\n" for u, v in g.edge_array().tolist())
    (root / "features.bin").write_bytes(np.ascontiguousarray(bundle.features, dtype="<f4").tobytes())
    with open(root / "labels.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{int(y)}\n" for y in bundle.labels)
    splits = {k: getattr(bundle.splits, k).tolist() for k in ("train", "val", "test")}
    (root / "splits.json").write_text(json.dumps(splits) + "\n", encoding="utf-8")
    if bundle.external_ids is not None:
        (root / "node_ids.txt").write_text("\n".join(bundle.external_ids) + "\n", encoding="utf-8")


def content_hash(graph: Graph, features: np.ndarray) -> str:
    """32-hex digest over structure and feature bytes; keys embedding caches."""
    h = hashlib.md5(graph.content_hash().encode())
    h.update(np.ascontiguousarray(features, dtype="<f4").tobytes())
    h.update(np.int64(features.shape[1]).tobytes())
    return h.hexdigest()
