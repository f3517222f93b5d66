"""Parameter-free mean aggregation of sampled subsets into the embedding tensor.

The tensor has shape ``(N, M, F)`` with ``M = 1 + S_1 + ... + S_K`` slots per
node, laid out ``(0,1), (1,1)..(1,S_1), ..., (K,1)..(K,S_K)``. It is built once
before training and can be cached on disk.

Cache layout (little-endian)::

    4s   magic "NRGC"
    u32  version
    u64  N
    u32  M
    u64  F
    u32  K
    u32  flags (bit 0: exact-hop localized sets)
    K x (u32 P, u32 S, u32 L)
    u64  sampling seed
    32s  bundle hash, hex
    f32  N*M*F values, node-major, then slot, then feature
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _backend
from .graph import Graph, content_hash
from .sampler import LayerSpec, SampleTable, SamplingPlan, sample_all

MAGIC = b"NRGC"
VERSION = 1
_HEAD = struct.Struct("<4sIQIQII")
_TAIL = struct.Struct("<Q32s")


class CacheError(ValueError):
    """Unreadable or truncated cache file."""


class StaleCacheError(CacheError):
    """Cache was built from a different bundle, plan or seed."""

    def __init__(self, field_name: str, cached, expected):
        self.field = field_name
        super().__init__(f"stale cache: {field_name} differs (cached {cached!r}, expected {expected!r})")


@dataclass(eq=False)
class EmbeddingTensor:
    values: np.ndarray
    plan: SamplingPlan
    seed: int
    bundle_hash: str = ""
    samples: SampleTable | None = field(default=None, repr=False)

    @property
    def num_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def num_slots(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @property
    def slot_index(self) -> dict[tuple[int, int], int]:
        return self.plan.slot_index


def aggregate_subset(features: np.ndarray, subset) -> np.ndarray:
    """Mean of the subset's feature rows in float64; zero vector if empty."""
    idx = np.asarray(list(subset), dtype=np.int64)
    if idx.size == 0:
        return np.zeros(features.shape[1], dtype=np.float64)
    return np.add.reduce(features[idx].astype(np.float64), axis=0) / idx.size


def build_embedding_tensor(g: Graph, features: np.ndarray, plan: SamplingPlan, roots=None, seed: int = 0,
                           backend: str | None = None, num_threads: int = 0,
                           bundle_hash: str | None = None) -> EmbeddingTensor:
    """Sample every root and aggregate each subset; rows follow ``roots`` order."""
    features = np.ascontiguousarray(features, dtype=np.float32)
    if features.shape[0] != g.num_nodes:
        raise ValueError(f"feature rows ({features.shape[0]}) != num_nodes ({g.num_nodes})")
    table = sample_all(g, plan, seed, roots, backend, num_threads)
    values = _backend.get(backend).aggregate_raw(features, table.members, table.member_counts, num_threads)
    if bundle_hash is None:
        bundle_hash = content_hash(g, features)
    return EmbeddingTensor(values, plan, seed, bundle_hash, table)


def save_cache(t: EmbeddingTensor, path) -> None:
    n, m, f = t.values.shape
    head = _HEAD.pack(MAGIC, VERSION, n, m, f, t.plan.K, int(t.plan.exact_hop))
    layers = b"".join(struct.pack("<III", x.P, x.S, x.L) for x in t.plan.layers)
    tail = _TAIL.pack(t.seed & (2**64 - 1), t.bundle_hash.encode("ascii").ljust(32, b"0")[:32])
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(head + layers + tail)
        fh.write(np.ascontiguousarray(t.values, dtype="<f4").tobytes())
    tmp.replace(path)


def read_cache_header(fh) -> dict:
    raw = fh.read(_HEAD.size)
    if len(raw) != _HEAD.size:
        raise CacheError("truncated header")
    magic, version, n, m, f, k, flags = _HEAD.unpack(raw)
    if magic != MAGIC:
        raise CacheError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CacheError(f"unsupported cache version {version}")
    raw = fh.read(12 * k + _TAIL.size)
    if len(raw) != 12 * k + _TAIL.size:
        raise CacheError("truncated header")
    layers = [LayerSpec(*struct.unpack_from("<III", raw, 12 * i)) for i in range(k)]
    seed, digest = _TAIL.unpack_from(raw, 12 * k)
    plan = SamplingPlan(tuple(layers), bool(flags & 1))
    if plan.num_slots != m:
        raise CacheError(f"slot count {m} does not match plan ({plan.num_slots})")
    return {"num_nodes": n, "num_slots": m, "dim": f, "plan": plan, "seed": seed,
            "bundle_hash": digest.decode("ascii")}


def load_cache(path, plan: SamplingPlan | None = None, seed: int | None = None,
               bundle_hash: str | None = None) -> EmbeddingTensor:
    """Read a cache; any given expectation that differs raises ``StaleCacheError``."""
    with open(path, "rb") as fh:
        head = read_cache_header(fh)
        expected = {"bundle_hash": bundle_hash, "plan": plan,
                    "seed": None if seed is None else seed & (2**64 - 1)}
        for key, want in expected.items():
            if want is not None and head[key] != want:
                shown = head[key].to_config() if key == "plan" else head[key]
                wanted = want.to_config() if key == "plan" else want
                raise StaleCacheError(key, shown, wanted)
        n, m, f = head["num_nodes"], head["num_slots"], head["dim"]
        raw = fh.read()
    if len(raw) != 4 * n * m * f:
        raise CacheError(f"truncated data: expected {4 * n * m * f} bytes, got {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4").reshape(n, m, f).astype(np.float32)
    return EmbeddingTensor(values, head["plan"], head["seed"], head["bundle_hash"])
