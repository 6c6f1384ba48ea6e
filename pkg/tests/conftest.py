import numpy as np
import pytest

from gcdro.graph import build_knn, graph_from_edges


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def ring_graph(n, w=1.0):
    edges = [(i, (i + 1) % n) for i in range(n)]
    return graph_from_edges(n, edges, np.full(n, w))


def path_graph(n, w=1.0):
    edges = [(i, i + 1) for i in range(n - 1)]
    return graph_from_edges(n, edges, np.full(n - 1, w))


def random_knn_graph(rng, n, k=4, d=3, scheme="gaussian"):
    X = rng.normal(size=(n, d))
    return build_knn(X, k=k, scheme=scheme)


def random_interior_weights(rng, n, concentration=5.0):
    q = rng.dirichlet(np.full(n, concentration))
    q = np.maximum(q, 1e-9)
    return q / q.sum()
