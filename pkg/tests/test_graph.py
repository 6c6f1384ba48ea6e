import numpy as np
import pytest

from conftest import path_graph
from gcdro.errors import ConfigError
from gcdro.graph import build_knn, degree_stats, dump_csv, graph_from_edges


def undirected_set(g):
    return {(min(i, j), max(i, j)) for i, j in zip(g.row, g.col)}


def test_collinear_points_k1():
    X = np.array([[0.0], [1.0], [10.0]])
    g = build_knn(X, k=1)
    assert undirected_set(g) == {(0, 1), (1, 2)}


def test_unit_square_k2():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    g = build_knn(X, k=2)
    assert undirected_set(g) == {(0, 1), (1, 2), (2, 3), (0, 3)}


def test_binary_scheme_unit_weights(rng):
    X = rng.normal(size=(20, 3))
    g = build_knn(X, k=3, scheme="binary")
    assert np.all(g.w == 1.0)
    assert g.bandwidth == 0.0


def test_gaussian_weights_positive_and_symmetric(rng):
    X = rng.normal(size=(40, 4))
    g = build_knn(X, k=5)
    g.validate()
    assert np.all(g.w > 0)
    assert np.all(g.w <= 1.0)
    assert g.bandwidth > 0
    # exact symmetry by construction
    assert np.array_equal(g.w, g.w[g.rev])
    assert np.array_equal(g.row[g.rev], g.col)


def test_duplicate_points_get_unit_weight():
    X = np.array([[0.0], [0.0], [5.0], [5.0]])
    g = build_knn(X, k=1)
    mask = g.row < g.col
    pairs = dict(zip(zip(g.row[mask], g.col[mask]), g.w[mask]))
    assert pairs[(0, 1)] == 1.0
    assert pairs[(2, 3)] == 1.0


def test_tie_break_by_smaller_index():
    # node 0 is equidistant from 1 and 2; k=1 must pick the smaller index
    X = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [3.0, 0.0]])
    g = build_knn(X, k=1)
    nbr, _ = g.neighbors(0)
    assert 1 in nbr


def test_rejects_bad_k():
    X = np.zeros((3, 1))
    with pytest.raises(ConfigError):
        build_knn(X, k=3)
    with pytest.raises(ConfigError):
        build_knn(X[:1], k=1)


def test_determinism(rng):
    X = rng.normal(size=(60, 5))
    a = build_knn(X, k=7)
    b = build_knn(X, k=7)
    assert np.array_equal(a.col, b.col)
    assert np.array_equal(a.w, b.w)
    assert a.bandwidth == b.bandwidth


def test_covariates_only_no_target_involved(rng):
    # the builder only ever sees X; identical X gives identical graphs
    X = rng.normal(size=(30, 2))
    g1 = build_knn(X, k=4)
    g2 = build_knn(X.copy(), k=4)
    assert np.array_equal(g1.col, g2.col) and np.array_equal(g1.w, g2.w)


def test_degree_stats_path():
    g = path_graph(3)
    st = degree_stats(g)
    assert (st.min, st.max) == (1, 2)
    assert st.mean == pytest.approx(4.0 / 3.0)


def test_degree_stats_complete():
    edges = [(i, j) for i in range(4) for j in range(i + 1, 4)]
    g = graph_from_edges(4, edges)
    st = degree_stats(g)
    assert (st.min, st.max, st.mean) == (3, 3, 3.0)


def test_knn_min_degree_at_least_k(rng):
    X = rng.normal(size=(50, 3))
    g = build_knn(X, k=5)
    assert degree_stats(g).min >= 5


def test_dump_csv(tmp_path, rng):
    X = rng.normal(size=(10, 2))
    g = build_knn(X, k=2)
    path = tmp_path / "g.csv"
    dump_csv(g, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# k=2,scheme=gaussian,bandwidth=")
    assert lines[1] == "i,j,w"
    assert len(lines) == 2 + g.n_edges // 2


def test_graph_from_edges_validation():
    with pytest.raises(ValueError):
        graph_from_edges(3, [(0, 0)])
    with pytest.raises(ValueError):
        graph_from_edges(3, [(0, 1), (1, 0)])
