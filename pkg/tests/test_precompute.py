import numpy as np
import pytest

from nrgcn import _backend
from nrgcn.graph import Graph, content_hash, load_bundle, row_normalize, save_bundle
from nrgcn.precompute import (CacheError, StaleCacheError, aggregate_subset, build_embedding_tensor,
                              load_cache, save_cache)
from nrgcn.sampler import MUL_PLAN, SIN_PLAN, SamplingPlan

from conftest import random_graph, tiny_bundle


def features(n, f, seed=0):
    rng = np.random.default_rng(seed)
    return row_normalize((rng.random((n, f)) * (rng.random((n, f)) < 0.5)).astype(np.float32))


def test_aggregate_subset_examples():
    x = np.array([[1, 0], [0, 1], [3, 3]], dtype=np.float32)
    np.testing.assert_array_equal(aggregate_subset(x, [2]), [3, 3])
    np.testing.assert_array_equal(aggregate_subset(x, []), [0, 0])
    np.testing.assert_array_equal(aggregate_subset(x, [0, 1]), [0.5, 0.5])


def test_slot_counts():
    g = random_graph(12, 0.3, 0)
    x = features(12, 5)
    t = build_embedding_tensor(g, x, SIN_PLAN, seed=1)
    assert t.values.shape == (12, 3, 5)
    ones = SamplingPlan(((1, 1, 2), (3, 1, 2), (2, 1, 2)))
    assert build_embedding_tensor(g, x, ones, seed=1).values.shape == (12, ones.K + 1, 5)
    assert build_embedding_tensor(g, x, MUL_PLAN, seed=1).values.shape == (12, 11, 5)


@pytest.mark.parametrize("backend", _backend.available())
@pytest.mark.parametrize("plan", [MUL_PLAN, SIN_PLAN, SamplingPlan(((1, 2, 3), (2, 3, 2)), exact_hop=True)])
def test_slots_match_recomputed_means(backend, plan):
    g = random_graph(10, 0.3, 3)
    x = features(10, 7, 3)
    t = build_embedding_tensor(g, x, plan, seed=5, backend=backend)
    for r in range(10):
        ss = t.samples.sample_set(r)
        for e in ss.entries:
            m = plan.slot_index[(e.hop, e.repeat)]
            exact = np.zeros(7) if not e.nodes else sum(x[u].astype(np.float64) for u in e.nodes) / len(e.nodes)
            np.testing.assert_allclose(t.values[r, m], exact, rtol=0, atol=1e-6)
        assert t.values[r, 0].tobytes() == x[r].tobytes()


def test_convex_hull_property():
    g = random_graph(60, 0.1, 4)
    x = features(60, 9, 4)
    t = build_embedding_tensor(g, x, MUL_PLAN, seed=2)
    s = t.samples
    for r in range(60):
        for m in range(t.num_slots):
            c = s.member_counts[r, m]
            if c == 0:
                assert not t.values[r, m].any()
                continue
            rows = x[s.members[r, m, :c]]
            assert np.all(t.values[r, m] >= rows.min(0) - 1e-7)
            assert np.all(t.values[r, m] <= rows.max(0) + 1e-7)


def test_rebuild_bit_identical():
    g = random_graph(50, 0.1, 5)
    x = features(50, 8)
    a = build_embedding_tensor(g, x, MUL_PLAN, seed=9)
    b = build_embedding_tensor(g, x, MUL_PLAN, seed=9)
    assert a.values.tobytes() == b.values.tobytes()


@pytest.mark.skipif("cython" not in _backend.available(), reason="compiled kernels not built")
def test_backends_bit_identical():
    g = random_graph(200, 0.04, 6)
    x = features(200, 33)
    a = build_embedding_tensor(g, x, MUL_PLAN, seed=3, backend="cython", num_threads=3)
    b = build_embedding_tensor(g, x, MUL_PLAN, seed=3, backend="python")
    assert a.values.tobytes() == b.values.tobytes()


def test_cache_round_trip(tmp_path):
    g = random_graph(20, 0.2, 7)
    x = features(20, 4)
    t = build_embedding_tensor(g, x, MUL_PLAN, seed=2**63 + 5)
    save_cache(t, tmp_path / "t.nrgc")
    back = load_cache(tmp_path / "t.nrgc", plan=MUL_PLAN, seed=2**63 + 5, bundle_hash=t.bundle_hash)
    assert back.values.tobytes() == t.values.tobytes()
    assert back.plan == MUL_PLAN and back.seed == t.seed and back.bundle_hash == t.bundle_hash


def test_cache_header_layout(tmp_path):
    g = random_graph(4, 0.5, 7)
    t = build_embedding_tensor(g, features(4, 3), SIN_PLAN, seed=1)
    save_cache(t, tmp_path / "t.nrgc")
    raw = (tmp_path / "t.nrgc").read_bytes()
    assert raw[:4] == b"NRGC"
    header = 4 + 4 + 8 + 4 + 8 + 4 + 4 + 12 * 2 + 8 + 32
    assert len(raw) == header + 4 * 4 * 3 * 3
    assert raw[header - 32:header].decode() == t.bundle_hash
    assert np.frombuffer(raw[header:], "<f4").tobytes() == t.values.tobytes()


def test_stale_cache_after_edge_change(tmp_path):
    b = tiny_bundle()
    save_bundle(b, tmp_path / "bundle")
    t = build_embedding_tensor(b.graph, b.features, MUL_PLAN, seed=0)
    save_cache(t, tmp_path / "t.nrgc")
    with open(tmp_path / "bundle" / "edges.txt", "a") as fh:
        fh.write("0 29\n" if not b.graph.has_edge(0, 29) else "1 28\n")
    changed = load_bundle(tmp_path / "bundle")
    with pytest.raises(StaleCacheError) as err:
        load_cache(tmp_path / "t.nrgc", bundle_hash=content_hash(changed.graph, changed.features))
    assert err.value.field == "bundle_hash"


def test_stale_cache_other_plan_or_seed(tmp_path):
    g = random_graph(20, 0.2, 8)
    t = build_embedding_tensor(g, features(20, 4), MUL_PLAN, seed=0)
    save_cache(t, tmp_path / "t.nrgc")
    with pytest.raises(StaleCacheError, match="plan"):
        load_cache(tmp_path / "t.nrgc", plan=SIN_PLAN)
    with pytest.raises(StaleCacheError, match="seed"):
        load_cache(tmp_path / "t.nrgc", seed=1)


def test_corrupt_cache(tmp_path):
    (tmp_path / "bad.nrgc").write_bytes(b"XXXX" + b"\0" * 40)
    with pytest.raises(CacheError):
        load_cache(tmp_path / "bad.nrgc")
    g = random_graph(20, 0.2, 8)
    t = build_embedding_tensor(g, features(20, 4), MUL_PLAN, seed=0)
    save_cache(t, tmp_path / "t.nrgc")
    raw = (tmp_path / "t.nrgc").read_bytes()
    (tmp_path / "t.nrgc").write_bytes(raw[:-3])
    with pytest.raises(CacheError, match="truncated"):
        load_cache(tmp_path / "t.nrgc")


def test_isolated_nodes_give_zero_slots():
    g = Graph.from_edges(3, [])
    x = features(3, 4) + 1
    t = build_embedding_tensor(g, x, MUL_PLAN, seed=0)
    assert not t.values[:, 1:].any()
    np.testing.assert_array_equal(t.values[:, 0], x)
