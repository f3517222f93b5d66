import numpy as np
import pytest

from nrgcn.graph import Bundle, Graph, SplitMasks


def random_graph(n, p, seed):
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return Graph.from_edges(n, np.argwhere(upper))


def floyd_warshall(g):
    """All-pairs hop distances; unreachable = inf."""
    n = g.num_nodes
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0)
    for u, v in g.edge_array():
        d[u, v] = d[v, u] = 1
    for k in range(n):
        d = np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :])
    return d


def path_graph(n):
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def tiny_bundle(n=30, f=6, c=3, seed=0):
    rng = np.random.default_rng(seed)
    g = random_graph(n, 0.15, seed)
    x = (rng.random((n, f)) < 0.4).astype(np.float32)
    y = rng.integers(0, c, n)
    perm = rng.permutation(n)
    splits = SplitMasks(np.sort(perm[:15]), np.sort(perm[15:20]), np.sort(perm[20:]))
    return Bundle(g, x, y, splits, c)


@pytest.fixture
def bundle():
    return tiny_bundle()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("]")[1].split(".")[0])):
            terminalreporter.write_line(line)
