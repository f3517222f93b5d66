import pickle

import numpy as np
import pytest
import scipy.sparse as sp

from nrgcn.cli import main
from nrgcn.datasets import load_planetoid, make_synthetic
from nrgcn.graph import load_bundle


def onehot(labels, c):
    out = np.zeros((len(labels), c))
    out[np.arange(len(labels)), labels] = 1
    return out


def write_planetoid(raw, name, n_ally=520, n_test=10, n_y=6, f=5, c=3, seed=0, skip_test=()):
    """Fabricated ind.<name>.* files: nodes 0..n_ally-1 in allx, test nodes after."""
    rng = np.random.default_rng(seed)
    n = n_ally + n_test
    feats = rng.random((n, f)).astype(np.float32)
    labels = rng.integers(0, c, n)
    test_index = np.arange(n_ally, n)
    present = np.array([i for i in test_index if i not in skip_test])
    shuffled = rng.permutation(present)
    graph = {i: [int((i + 1) % n), int((i + 7) % n)] for i in range(n)}
    parts = {
        "x": sp.csr_matrix(feats[:n_y]), "y": onehot(labels[:n_y], c),
        "allx": sp.csr_matrix(feats[:n_ally]), "ally": onehot(labels[:n_ally], c),
        # tx/ty rows follow the order of the test.index file
        "tx": sp.csr_matrix(feats[shuffled]), "ty": onehot(labels[shuffled], c),
        "graph": graph,
    }
    raw.mkdir(parents=True, exist_ok=True)
    for key, value in parts.items():
        with open(raw / f"ind.{name}.{key}", "wb") as fh:
            pickle.dump(value, fh)
    (raw / f"ind.{name}.test.index").write_text("\n".join(map(str, shuffled)) + "\n")
    return feats, labels, present


def test_planetoid_full_split(tmp_path):
    feats, labels, test = write_planetoid(tmp_path, "cora")
    b = load_planetoid(tmp_path, "cora")
    assert b.num_nodes == 530 and b.num_classes == 3
    np.testing.assert_array_equal(b.features, feats)
    np.testing.assert_array_equal(b.labels, labels)
    np.testing.assert_array_equal(b.splits.train, np.arange(20))
    np.testing.assert_array_equal(b.splits.val, np.arange(20, 520))
    np.testing.assert_array_equal(np.sort(b.splits.test), test)
    assert b.graph.has_edge(0, 1) and b.graph.has_edge(0, 7)


def test_planetoid_public_split(tmp_path):
    write_planetoid(tmp_path, "pubmed")
    b = load_planetoid(tmp_path, "pubmed", split="public")
    np.testing.assert_array_equal(b.splits.train, np.arange(6))
    np.testing.assert_array_equal(b.splits.val, np.arange(6, 506))


def test_citeseer_missing_test_rows_padded(tmp_path):
    feats, labels, test = write_planetoid(tmp_path, "citeseer", skip_test=(523,))
    b = load_planetoid(tmp_path, "citeseer")
    assert b.num_nodes == 530
    assert not b.features[523].any()
    np.testing.assert_array_equal(b.features[test], feats[test])
    np.testing.assert_array_equal(b.labels[test], labels[test])


def test_missing_file(tmp_path):
    write_planetoid(tmp_path, "cora")
    (tmp_path / "ind.cora.graph").unlink()
    with pytest.raises(FileNotFoundError, match="ind.cora.graph"):
        load_planetoid(tmp_path, "cora")


def test_convert_cli_writes_loadable_bundle(tmp_path):
    write_planetoid(tmp_path / "raw", "cora")
    assert main(["convert-planetoid", str(tmp_path / "raw"), "cora", str(tmp_path / "cora")]) == 0
    b = load_bundle(tmp_path / "cora")
    assert b.num_nodes == 530 and len(b.splits.val) == 500


def test_synthetic_is_seeded_and_homophilous():
    a = make_synthetic(num_nodes=300, seed=4)
    b = make_synthetic(num_nodes=300, seed=4)
    assert a.graph.content_hash() == b.graph.content_hash()
    np.testing.assert_array_equal(a.features, b.features)
    e = a.graph.edge_array()
    assert np.mean(a.labels[e[:, 0]] == a.labels[e[:, 1]]) > 0.6
    n = len(a.splits.train) + len(a.splits.val) + len(a.splits.test)
    assert n == 300
