import math

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import random_interior_weights, random_knn_graph
from gcdro.graph import graph_from_edges
from gcdro.risk import (
    FreeEnergySpec,
    RiskConfig,
    check_weights,
    entropy,
    free_energy,
    interaction_matrix,
    rbf_gram,
    risk,
    spec_for_method,
    total_variation,
    uniform_weights,
)

TWO_NODES = graph_from_edges(2, [(0, 1)], [1.0])


def naive_tv(ell, q, g):
    # independent O(n^2) double loop over the dense adjacency
    W = np.zeros((g.n, g.n))
    W[g.row, g.col] = g.w
    total = 0.0
    for i in range(g.n):
        for j in range(g.n):
            total += W[i, j] * q[i] * q[j] * (ell[i] - ell[j]) ** 2
    return total


def test_tv_constant_losses_zero(rng):
    g = random_knn_graph(rng, 15)
    q = random_interior_weights(rng, 15)
    assert total_variation(np.full(15, 3.3), q, g) == 0.0


def test_tv_two_node_value():
    # both orientations counted: 2 * (0.25 * 1) = 0.5
    assert total_variation(np.array([0.0, 1.0]), np.array([0.5, 0.5]), TWO_NODES) == 0.5


def test_tv_matches_naive_double_loop(rng):
    for _ in range(5):
        n = int(rng.integers(5, 20))
        g = random_knn_graph(rng, n, k=3)
        ell = rng.normal(size=n)
        q = random_interior_weights(rng, n)
        assert total_variation(ell, q, g) == pytest.approx(naive_tv(ell, q, g), rel=1e-12)


def test_tv_nonnegative(rng):
    for _ in range(10):
        n = int(rng.integers(4, 12))
        g = random_knn_graph(rng, n, k=2)
        assert total_variation(rng.normal(size=n), random_interior_weights(rng, n), g) >= 0.0


def test_entropy_values():
    assert entropy(uniform_weights(4)) == pytest.approx(math.log(4.0), abs=1e-12)
    assert entropy(np.array([0.5, 0.5])) == pytest.approx(math.log(2.0), abs=1e-12)
    with pytest.raises(ValueError):
        entropy(np.array([1.0, 0.0]))


def test_entropy_bounds(rng):
    for _ in range(10):
        n = int(rng.integers(2, 30))
        h = entropy(random_interior_weights(rng, n))
        assert 0.0 < h <= math.log(n) + 1e-12


def test_risk_reductions(rng):
    g = random_knn_graph(rng, 10)
    ell = rng.uniform(size=10)
    q = random_interior_weights(rng, 10)
    assert risk(ell, q, g, RiskConfig(0.0, 0.0)) == pytest.approx(float(q @ ell), abs=1e-15)


def test_risk_two_node_hand_value():
    # 0.5 - 0.25 + log 2
    val = risk(
        np.array([0.0, 1.0]), np.array([0.5, 0.5]), TWO_NODES, RiskConfig(alpha=1.0, beta=1.0)
    )
    assert val == pytest.approx(0.25 + math.log(2.0), abs=1e-12)
    assert val == pytest.approx(0.943147, abs=1e-6)


def test_risk_uniform_constant_losses(rng):
    g = random_knn_graph(rng, 8)
    c, beta = 2.5, 0.7
    val = risk(np.full(8, c), uniform_weights(8), g, RiskConfig(alpha=1.3, beta=beta))
    assert val == pytest.approx(c + beta * math.log(8.0), abs=1e-12)


def test_free_energy_zero_spec():
    spec = FreeEnergySpec(K=None, V=np.zeros(3), beta=0.0, has_entropy=False)
    assert free_energy(spec, uniform_weights(3)) == 0.0


def test_free_energy_negates_risk(rng):
    for _ in range(20):
        n = int(rng.integers(4, 30))
        g = random_knn_graph(rng, n, k=3)
        ell = rng.uniform(0.0, 2.0, size=n)
        q = random_interior_weights(rng, n)
        alpha = float(rng.uniform(0.0, 2.0))
        beta = float(rng.uniform(0.1, 2.0))
        spec = spec_for_method("gcdro", ell, g, alpha=alpha, beta=beta)
        r = risk(ell, q, g, RiskConfig(alpha=alpha, beta=beta))
        assert free_energy(spec, q) == pytest.approx(-r, abs=1e-12)


def test_free_energy_potential_only(rng):
    n = 6
    ell = rng.uniform(size=n)
    spec = FreeEnergySpec(K=None, V=-ell, beta=0.4, has_entropy=True)
    got = free_energy(spec, uniform_weights(n))
    assert got == pytest.approx(-ell.mean() - 0.4 * math.log(n), abs=1e-12)


def test_table_specs_shapes(rng):
    n = 12
    g = random_knn_graph(rng, n, k=3)
    ell = rng.uniform(size=n)

    kl = spec_for_method("kl-dro", ell, lam=0.7)
    assert kl.K is None and kl.has_entropy and kl.beta == 0.7
    assert np.array_equal(kl.V, -ell)

    chi = spec_for_method("chi2-dro", ell, lam=0.3)
    assert not chi.has_entropy
    assert np.allclose(chi.K.toarray(), 0.3 * np.eye(n))
    assert np.array_equal(chi.V, -ell)

    gd = spec_for_method("gdro", ell, beta=1.1)
    assert gd.K is None and gd.has_entropy and gd.beta == 1.1

    gc = spec_for_method("gcdro", ell, g, alpha=0.9, beta=1.5)
    assert gc.has_entropy and gc.beta == 1.5
    K = gc.K.toarray()
    i, j = int(g.row[0]), int(g.col[0])
    assert K[i, j] == pytest.approx(0.45 * g.w[0] * (ell[i] - ell[j]) ** 2)
    assert np.count_nonzero(K) <= g.n_edges

    X = rng.normal(size=(n, 3))
    mmd = spec_for_method("mmd-dro", ell, g, lam=0.8, X=X)
    assert not mmd.has_entropy
    gram = rbf_gram(X, g.bandwidth)
    assert np.allclose(mmd.K, gram)
    assert np.allclose(mmd.V, -ell - (2 * 0.8 / n) * gram.T @ np.ones(n))


def test_gdro_spec_uniform_constant():
    n, c, beta = 5, 1.7, 0.9
    spec = spec_for_method("gdro", np.full(n, c), beta=beta)
    got = free_energy(spec, uniform_weights(n))
    assert got == pytest.approx(-c - beta * math.log(n), abs=1e-12)


def test_chi2_spec_matches_dual_penalty_up_to_constant(rng):
    # (lam/n) sum (n q - 1)^2 equals q' (lam n I) q - lam; the identity-matrix
    # spec with coefficient lam*n must differ from it by a q-free constant
    n = 8
    ell = rng.uniform(size=n)
    lam = 0.6
    spec = spec_for_method("chi2-dro", ell, lam=lam * n)
    diffs = []
    for _ in range(10):
        q = random_interior_weights(rng, n)
        e_table = free_energy(spec, q)
        e_dual = (lam / n) * np.sum((n * q - 1.0) ** 2) - float(q @ ell)
        diffs.append(e_table - e_dual)
    assert np.ptp(diffs) < 1e-10


def test_unknown_method_rejected():
    from gcdro.errors import ConfigError

    with pytest.raises(ConfigError):
        spec_for_method("marginal-chi2", np.ones(3))


def test_negated_hessian_positive_definite(rng):
    # beta * diag(1/q) - 2K factorizes for the default calibration ranges
    for alpha, beta in [(0.1, 1.0), (0.5, 1.0), (1.0, 5.0)]:
        n = 50
        g = random_knn_graph(rng, n, k=5)
        ell = rng.uniform(size=n)
        q = random_interior_weights(rng, n, concentration=5.0)
        K = interaction_matrix(ell, g, alpha).toarray()
        H = beta * np.diag(1.0 / q) - 2.0 * K
        np.linalg.cholesky(H)  # raises LinAlgError if not positive definite


def test_check_weights():
    check_weights(np.array([0.5, 0.5]))
    check_weights(np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        check_weights(np.array([1.0, 0.0]), interior=True)
    with pytest.raises(ValueError):
        check_weights(np.array([0.7, 0.7]))
    with pytest.raises(ValueError):
        check_weights(np.array([1.5, -0.5]))


def test_free_energy_spec_symmetry_check():
    K = sp.csr_matrix(np.array([[0.0, 1.0], [0.5, 0.0]]))
    with pytest.raises(ValueError):
        FreeEnergySpec(K=K, V=np.zeros(2), beta=0.0, has_entropy=False)
