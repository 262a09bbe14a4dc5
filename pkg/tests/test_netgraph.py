import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asyncgossip.errors import IrreducibilityError, ValidationError
from asyncgossip.netgraph import (
    Graph,
    NonnegativeMatrixModel,
    StochasticMatrixModel,
    erdos_renyi_model,
    perron_eigenpair,
    power_method,
    read_dense_csv,
    read_edge_list,
    second_eigenvalue_modulus,
    solve_poisson,
    stationary_distribution,
    support_period,
    write_dense_csv,
    write_edge_list,
)

TWO = np.array([[0.7, 0.3], [0.5, 0.5]])
SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


def random_stochastic(rng, d, density=1.0):
    w = rng.random((d, d)) * (rng.random((d, d)) < density)
    np.fill_diagonal(w, 0.0)
    # a cycle keeps the support irreducible
    for i in range(d):
        w[i, (i + 1) % d] += 0.1
    return w / w.sum(axis=1, keepdims=True)


@st.composite
def stochastic_matrices(draw, dmin=2, dmax=8):
    d = draw(st.integers(dmin, dmax))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_stochastic(np.random.default_rng(seed), d, density=0.6)


# ------------------------------------------------------------------ types

def test_graph_rejects_out_of_range_and_loops():
    with pytest.raises(ValidationError):
        Graph(2, frozenset({(0, 2)}))
    with pytest.raises(ValidationError):
        Graph(2, frozenset({(1, 1)}))


def test_graph_connectivity():
    g = Graph.from_support(TWO)
    assert g.is_strongly_connected()
    assert g.neighbors(0) == [1]
    g2 = Graph(3, frozenset({(0, 1), (1, 0)}))
    assert not g2.is_strongly_connected()


def test_stochastic_model_validation():
    with pytest.raises(ValidationError):
        StochasticMatrixModel([[0.5, 0.4], [0.5, 0.5]])
    with pytest.raises(ValidationError):
        StochasticMatrixModel([[1.2, -0.2], [0.5, 0.5]])
    with pytest.raises(ValidationError):
        StochasticMatrixModel(np.ones((2, 3)) / 3)
    m = StochasticMatrixModel(TWO)
    assert m.irreducible and m.aperiodic
    with pytest.raises(ValueError):
        m.p[0, 0] = 0.0  # read-only after construction


def test_irreducibility_is_computed_not_asserted():
    red = StochasticMatrixModel([[1.0, 0.0], [0.5, 0.5]])
    assert not red.irreducible
    with pytest.raises(IrreducibilityError):
        stationary_distribution(red)


def test_period():
    assert support_period(SWAP) == 2
    assert support_period(TWO) == 1
    cyc = np.roll(np.eye(3), 1, axis=1)
    assert StochasticMatrixModel(cyc).period == 3


def test_nonnegative_model():
    q = NonnegativeMatrixModel([[1, 2], [3, 4]])
    np.testing.assert_array_equal(q.row_sums, [3, 7])
    with pytest.raises(ValidationError):
        NonnegativeMatrixModel([[0, 0], [1, 1]])
    with pytest.raises(ValidationError):
        NonnegativeMatrixModel([[-1, 2], [1, 1]])


# ------------------------------------------------------------- operations

def test_stationary_two_node():
    np.testing.assert_allclose(stationary_distribution(TWO), [0.625, 0.375], atol=1e-14)
    np.testing.assert_allclose(stationary_distribution(SWAP), [0.5, 0.5], atol=1e-14)


def test_stationary_matches_power_iteration():
    P = random_stochastic(np.random.default_rng(3), 5)
    eta = stationary_distribution(P)
    v = np.full(5, 0.2)
    for _ in range(5000):
        v = v @ P
    np.testing.assert_allclose(eta, v, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(stochastic_matrices())
def test_stationary_is_invariant(P):
    eta = stationary_distribution(P)
    np.testing.assert_allclose(eta @ P, eta, atol=1e-10)
    assert abs(eta.sum() - 1) < 1e-12 and np.all(eta > 0)


def test_second_eigenvalue_examples():
    assert second_eigenvalue_modulus(TWO) == pytest.approx(0.2, abs=1e-12)
    assert second_eigenvalue_modulus(SWAP) == pytest.approx(1.0, abs=1e-12)
    for d in (3, 5, 8):
        K = (np.ones((d, d)) - np.eye(d)) / (d - 1)
        assert second_eigenvalue_modulus(K) == pytest.approx(1 / (d - 1), abs=1e-12)


def test_second_eigenvalue_iff_ergodic():
    suite = [TWO, SWAP, np.roll(np.eye(4), 1, axis=1), [[1.0, 0.0], [0.0, 1.0]],
             [[0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5]],
             random_stochastic(np.random.default_rng(1), 6)]
    for P in suite:
        m = StochasticMatrixModel(P)
        assert (second_eigenvalue_modulus(m) < 1 - 1e-12) == (m.irreducible and m.aperiodic)


def test_poisson_examples():
    sol = solve_poisson(TWO, [0.0, 1.0], 0)
    assert sol.beta == pytest.approx(0.375, abs=1e-14)
    np.testing.assert_allclose(sol.V, [0.375, 1.625], atol=1e-12)
    const = solve_poisson(TWO, [2.5, 2.5], 1)
    assert const.beta == pytest.approx(2.5)
    np.testing.assert_allclose(const.V, [2.5, 2.5], atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(stochastic_matrices(), st.integers(0, 2**31))
def test_poisson_residual(P, seed):
    d = P.shape[0]
    rng = np.random.default_rng(seed)
    c = rng.normal(size=d)
    i0 = int(rng.integers(d))
    sol = solve_poisson(P, c, i0)
    assert sol.residual < 1e-9
    assert sol.V[i0] == pytest.approx(sol.beta, abs=1e-10)
    assert sol.beta == pytest.approx(stationary_distribution(P) @ c, abs=1e-10)


def test_poisson_errors():
    with pytest.raises(IrreducibilityError):
        solve_poisson([[1.0, 0.0], [0.5, 0.5]], [0, 1])
    with pytest.raises(ValidationError):
        solve_poisson(TWO, [0, 1, 2])
    with pytest.raises(ValidationError):
        solve_poisson(TWO, [0, 1], 5)


def test_perron_examples():
    pp = perron_eigenpair(SWAP, [0.5, 0.5])
    assert pp.lam == pytest.approx(1.0)
    np.testing.assert_allclose(pp.qstar, [1, 1], atol=1e-12)
    pp = perron_eigenpair([[1, 2], [3, 4]], [0.5, 0.5])
    assert pp.lam == pytest.approx((5 + np.sqrt(33)) / 2, rel=1e-12)
    assert pp.alpha @ pp.qstar == pytest.approx(pp.lam, rel=1e-12)
    assert pp.residual < 1e-9


def test_perron_of_transposed_stochastic():
    P = random_stochastic(np.random.default_rng(7), 6)
    pp = perron_eigenpair(P.T)
    eta = stationary_distribution(P)
    assert pp.lam == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(pp.qstar / pp.qstar.sum(), eta, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31))
def test_perron_matches_power_method(d, seed):
    rng = np.random.default_rng(seed)
    Q = rng.random((d, d)) + 0.05
    alpha = rng.random(d) + 0.1
    alpha /= alpha.sum()
    pp = perron_eigenpair(Q, alpha)
    q = power_method(Q, alpha) * pp.lam
    np.testing.assert_allclose(q, pp.qstar, rtol=1e-8)
    assert np.max(np.abs(Q @ pp.qstar - pp.lam * pp.qstar)) / pp.lam < 1e-9


def test_perron_errors():
    with pytest.raises(IrreducibilityError):
        perron_eigenpair([[1, 0], [1, 1]])
    with pytest.raises(ValidationError):
        perron_eigenpair(SWAP, [1.0, 0.0])


def test_er_complete_graph():
    g, m = erdos_renyi_model(6, 1.0, seed=4)
    off = m.p[~np.eye(6, dtype=bool)]
    assert np.all(off > 0)
    assert g.meta["undirected_edges"] == 15


def test_er_deterministic_and_connected():
    g1, m1 = erdos_renyi_model(30, 0.2, seed=11)
    g2, m2 = erdos_renyi_model(30, 0.2, seed=11)
    np.testing.assert_array_equal(m1.p, m2.p)
    assert m1.irreducible and g1.is_strongly_connected()
    np.testing.assert_allclose(m1.p.sum(axis=1), 1.0, atol=1e-12)


def test_er_edge_count():
    counts = [erdos_renyi_model(100, 0.2, seed=s)[0].meta["undirected_edges"] for s in range(50)]
    assert abs(np.mean(counts) - 990) < 99


def test_er_retry_recorded():
    # very sparse graphs are almost never connected on the first draw
    g, m = erdos_renyi_model(12, 0.25, seed=0, max_retries=10_000)
    assert g.meta["seed_used"] == g.meta["seed"] + g.meta["retries"]
    assert m.irreducible


def test_er_validation():
    with pytest.raises(ValidationError):
        erdos_renyi_model(1, 0.5, 0)
    with pytest.raises(ValidationError):
        erdos_renyi_model(5, 0.0, 0)


def test_edge_list_round_trip(tmp_path):
    P = random_stochastic(np.random.default_rng(2), 7, density=0.5)
    path = tmp_path / "m.txt"
    write_edge_list(P, path)
    back = read_edge_list(path)
    np.testing.assert_array_equal(back, P)
    first = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")][0]
    i, j, _ = first.split()
    assert int(i) >= 1 and int(j) >= 1  # 1-based on disk


def test_edge_list_rejects_bad_input(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("0 1 0.5\n")
    with pytest.raises(ValidationError):
        read_edge_list(p)
    p.write_text("1 2 0.5\n1 2 0.5\n")
    with pytest.raises(ValidationError):
        read_edge_list(p)


def test_dense_csv_round_trip(tmp_path):
    P = random_stochastic(np.random.default_rng(5), 4)
    path = tmp_path / "m.csv"
    write_dense_csv(P, path)
    np.testing.assert_array_equal(read_dense_csv(path), P)
