import numpy as np
import pytest

from conftest import random_knn_graph
from gcdro.datagen import Dataset
from gcdro.dro import (
    Chi2DROSpec,
    DOROSpec,
    ERMSpec,
    GCDROSpec,
    GDROSpec,
    KLDROSpec,
    TrainConfig,
    brute_force_worst_case,
    chi2_worst_case,
    doro_filter,
    kl_worst_case,
    method_from_dict,
    train,
)
from gcdro.models import init_linear


def kl_div(q):
    n = len(q)
    pos = q > 0
    return float(np.sum(q[pos] * np.log(q[pos] * n)))


def chi2_div(q):
    n = len(q)
    return float(np.mean((n * q - 1.0) ** 2))


# --- KL dual ----------------------------------------------------------------


def test_kl_constant_losses_uniform():
    sol = kl_worst_case(np.full(5, 2.0), rho=0.3)
    assert np.allclose(sol.q, 0.2)
    assert sol.status == "degenerate-losses"
    assert sol.constraint_residual == pytest.approx(-0.3)


def test_kl_zero_radius_uniform():
    sol = kl_worst_case(np.array([0.0, 1.0, 2.0]), rho=0.0)
    assert np.allclose(sol.q, 1 / 3)
    assert sol.status == "zero-radius"


def test_kl_two_point_matches_grid():
    ell = np.array([0.0, 1.0])
    rho = 0.1
    sol = kl_worst_case(ell, rho)
    assert sol.status == "ok"
    assert abs(sol.constraint_residual) <= 1e-8
    # exhaustive grid over the 1-simplex at 1e-4 resolution
    q_grid = brute_force_worst_case(ell, "kl", radius=rho, grid_resolution=1e-4)
    assert abs(sol.objective - float(q_grid @ ell)) <= 1e-3
    # tilting structure: q2/q1 = exp(1/lam)
    assert sol.q[1] / sol.q[0] == pytest.approx(np.exp(1.0 / sol.lam), rel=1e-9)


def test_kl_vertex_limit_flagged():
    sol = kl_worst_case(np.array([0.0, 1.0]), rho=2.0)  # log 2 < 2
    assert sol.status == "vertex-limit"
    assert np.allclose(sol.q, [0.0, 1.0])
    assert sol.objective == pytest.approx(1.0)


def test_kl_ratio_law(rng):
    # log weights are affine in losses with one shared slope
    ell = rng.uniform(0, 3, size=15)
    sol = kl_worst_case(ell, rho=0.4)
    lr = np.log(sol.q)
    slopes = (lr - lr[0])[1:] / (ell - ell[0])[1:]
    assert np.ptp(slopes) <= 1e-6
    assert slopes[0] == pytest.approx(1.0 / sol.lam, rel=1e-6)


def test_kl_dual_primal_consistency(rng):
    for _ in range(10):
        ell = rng.uniform(0, 2, size=int(rng.integers(3, 30)))
        sol = kl_worst_case(ell, rho=float(rng.uniform(0.01, 0.5)))
        assert sol.objective == pytest.approx(float(sol.q @ ell), abs=1e-8)
        assert abs(sol.q.sum() - 1.0) < 1e-12


def test_kl_rejects_negative_radius():
    with pytest.raises(ValueError):
        kl_worst_case(np.ones(3), rho=-0.1)


# --- chi-square dual ---------------------------------------------------------


def test_chi2_constant_losses_uniform():
    sol = chi2_worst_case(np.full(4, 1.0), rho=0.5)
    assert np.allclose(sol.q, 0.25)
    assert sol.status == "degenerate-losses"


def test_chi2_zero_radius_uniform():
    sol = chi2_worst_case(np.array([0.0, 1.0, 2.0]), rho=0.0)
    assert np.allclose(sol.q, 1 / 3)


def test_chi2_three_point_matches_grid():
    ell = np.array([0.0, 1.0, 2.0])
    rho = 0.5
    sol = chi2_worst_case(ell, rho)
    assert sol.status == "ok"
    assert abs(sol.constraint_residual) <= 1e-8
    q_grid = brute_force_worst_case(ell, "chi2", radius=rho, grid_resolution=1e-3)
    assert abs(sol.objective - float(q_grid @ ell)) <= 1e-3


def test_chi2_ratio_law(rng):
    ell = rng.uniform(0, 2, size=12)
    sol = chi2_worst_case(ell, rho=1.0)
    thresh = sol.eta - sol.lam
    clipped = np.maximum(ell - thresh, 0.0)
    support = sol.q > 0
    ratio = sol.q[support] / sol.q[support][0]
    expect = clipped[support] / clipped[support][0]
    assert np.abs(ratio - expect).max() <= 1e-6


def test_chi2_vertex_limit():
    sol = chi2_worst_case(np.array([0.0, 5.0]), rho=3.0)  # chi2 of point mass = 1
    assert sol.status == "vertex-limit"
    assert np.allclose(sol.q, [0.0, 1.0])


def test_chi2_dual_primal_consistency(rng):
    for _ in range(10):
        ell = rng.uniform(0, 2, size=int(rng.integers(3, 30)))
        sol = chi2_worst_case(ell, rho=float(rng.uniform(0.05, 0.8)))
        assert sol.objective == pytest.approx(float(sol.q @ ell), abs=1e-8)
        assert sol.q.min() >= 0.0
        assert abs(sol.q.sum() - 1.0) < 1e-12


# --- DORO filter --------------------------------------------------------------


def test_doro_keeps_everything_at_zero():
    assert np.array_equal(doro_filter(np.array([3.0, 1.0, 2.0]), 0.0), [0, 1, 2])


def test_doro_drops_top_losses():
    kept = doro_filter(np.array([1.0, 5.0, 2.0, 4.0]), 0.25)
    assert np.array_equal(kept, [0, 2, 3])


def test_doro_equal_losses_prefix():
    kept = doro_filter(np.ones(5), 0.3)
    assert np.array_equal(kept, [0, 1, 2, 3])


def test_doro_reduces_to_inner_at_zero_drop(rng):
    ell = rng.uniform(0, 2, size=10)
    inner = Chi2DROSpec(rho=0.4)
    from gcdro.dro import _inner_weights

    q_doro, _ = _inner_weights(DOROSpec(drop_frac=0.0, inner=inner), ell, None, None)
    q_inner, _ = _inner_weights(inner, ell, None, None)
    assert np.array_equal(q_doro, q_inner)


# --- brute force oracle --------------------------------------------------------


def test_brute_force_unconstrained_point_mass():
    q = brute_force_worst_case(np.array([0.0, 1.0]), "none", grid_resolution=0.01)
    assert np.allclose(q, [0.0, 1.0])


def test_brute_force_zero_radius_uniform():
    q = brute_force_worst_case(np.array([0.0, 1.0]), "kl", radius=0.0, grid_resolution=0.5)
    assert np.allclose(q, [0.5, 0.5])


def test_brute_force_rejects_large_n():
    with pytest.raises(ValueError):
        brute_force_worst_case(np.zeros(7))


def test_solvers_match_brute_force_small_instances(rng):
    for _ in range(8):
        n = int(rng.integers(2, 4))
        ell = rng.uniform(0, 1, size=n)
        rho_kl = float(rng.uniform(0.02, 0.3))
        res = 1e-4 if n == 2 else 1e-3
        sol = kl_worst_case(ell, rho_kl)
        q_grid = brute_force_worst_case(ell, "kl", radius=rho_kl, grid_resolution=res)
        assert abs(sol.objective - float(q_grid @ ell)) <= 1e-3

        rho_c = float(rng.uniform(0.05, 0.5))
        sol = chi2_worst_case(ell, rho_c)
        q_grid = brute_force_worst_case(ell, "chi2", radius=rho_c, grid_resolution=res)
        assert abs(sol.objective - float(q_grid @ ell)) <= 1e-3


# --- training ------------------------------------------------------------------


def make_line_ds(rng, n=40):
    X = rng.normal(size=(n, 1))
    return Dataset(X=X, y=2.0 * X[:, 0], group_id=np.zeros(n, dtype=int),
                   noise_flag=np.zeros(n, dtype=bool))


def test_train_erm_recovers_exact_line(rng):
    ds = make_line_ds(rng)
    tm = train(ERMSpec(), init_linear(1), ds, tc=TrainConfig(epochs=4000, lr=1e-2))
    assert tm.params.theta[0] == pytest.approx(2.0, abs=1e-3)
    assert np.allclose(tm.final_q, 1.0 / ds.n)


def test_train_gcdro_alpha0_equals_gdro_bitwise(rng):
    n = 30
    X = rng.normal(size=(n, 2))
    y = X @ np.array([1.0, -1.0]) + 0.1 * rng.normal(size=n)
    ds = Dataset(X=X, y=y, group_id=np.zeros(n, dtype=int), noise_flag=np.zeros(n, dtype=bool))
    g = random_knn_graph(rng, n, k=3)
    g = type(g)(**{**g.__dict__})  # same graph for both runs
    tc = TrainConfig(epochs=40, lr=1e-2, record_every=10)
    a = train(GDROSpec(beta=1.0, t_in=20, tau=0.5), init_linear(2), ds, g=g, tc=tc)
    b = train(GCDROSpec(alpha=0.0, beta=1.0, t_in=20, tau=0.5), init_linear(2), ds, g=g, tc=tc)
    assert np.array_equal(a.params.theta, b.params.theta)
    assert a.params.bias == b.params.bias
    assert np.array_equal(a.final_q, b.final_q)


def test_train_requires_graph_for_flow_methods(rng):
    ds = make_line_ds(rng, 10)
    with pytest.raises(ValueError):
        train(GDROSpec(), init_linear(1), ds, tc=TrainConfig(epochs=1))


def test_train_deterministic(rng):
    ds = make_line_ds(rng, 20)
    g = random_knn_graph(np.random.default_rng(5), 20, k=3)
    tc = TrainConfig(epochs=25, lr=1e-2)
    spec = GCDROSpec(alpha=0.5, beta=1.0, t_in=15, tau=0.5)
    a = train(spec, init_linear(1), ds, g=g, tc=tc)
    b = train(spec, init_linear(1), ds, g=g, tc=tc)
    assert np.array_equal(a.params.theta, b.params.theta)


def test_train_diagnostics_schema(rng):
    ds = make_line_ds(rng, 15)
    tm = train(KLDROSpec(rho=0.1), init_linear(1), ds, tc=TrainConfig(epochs=12, record_every=5))
    assert {d["epoch"] for d in tm.diagnostics} == {0, 5, 10, 11}
    for rec in tm.diagnostics:
        assert set(rec) == {"epoch", "risk", "weighted_loss", "tv", "entropy", "action", "grad_norm"}


def test_train_nonfinite_losses_abort():
    X = np.array([[1e200], [1.0]])
    ds = Dataset(X=X, y=np.zeros(2), group_id=np.zeros(2, dtype=int),
                 noise_flag=np.zeros(2, dtype=bool))
    from gcdro.errors import NumericalError

    with pytest.raises(NumericalError, match="epoch"):
        train(
            ERMSpec(),
            init_linear(1),
            type(ds)(X=ds.X * np.inf, y=ds.y, group_id=ds.group_id, noise_flag=ds.noise_flag),
            tc=TrainConfig(epochs=2),
        )


# --- method parsing --------------------------------------------------------------


def test_method_from_dict():
    assert isinstance(method_from_dict({"name": "erm"}), ERMSpec)
    m = method_from_dict({"name": "gcdro", "alpha": 2.0, "beta": 3.0, "t_in": 7, "tau": 0.1})
    assert (m.alpha, m.beta, m.t_in) == (2.0, 3.0, 7)
    d = method_from_dict({"name": "doro", "drop_frac": 0.1, "inner": {"name": "kl_dro", "rho": 0.2}})
    assert isinstance(d.inner, KLDROSpec)
    with pytest.raises(ValueError):
        method_from_dict({"name": "nope"})
    with pytest.raises(ValueError):
        method_from_dict({"name": "erm", "rho": 1.0})


def test_method_validation():
    with pytest.raises(ValueError):
        KLDROSpec(rho=0.0)
    with pytest.raises(ValueError):
        DOROSpec(drop_frac=0.5)
    with pytest.raises(ValueError):
        GCDROSpec(theta_grad="bogus")
