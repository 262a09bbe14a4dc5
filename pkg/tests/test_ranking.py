import itertools

import numpy as np
import pytest

from asyncgossip.engine import ActivationProcess, NoiseModel, StepSchedule, run_many
from asyncgossip.errors import IrreducibilityError, ValidationError
from asyncgossip.netgraph import perron_eigenpair, stationary_distribution
from asyncgossip.spectral import (
    HitsGossip,
    PageRankGossip,
    PushGossip,
    ReputationGossip,
    cycle_neighborhoods,
    gibbs_distribution,
    gibbs_matrix,
    google_transpose,
    hits_step,
    pagerank_dense,
    pagerank_step,
    push_step,
    rating_spread,
    reputation_step,
)

SYNC = ActivationProcess.synchronous()
PSI = np.array([3.0, 1.0, 4.0, 1.5, 5.0, 2.0])


def chain(d):
    A = np.zeros((d, d))
    for i in range(d - 1):
        A[i, i + 1] = A[i + 1, i] = 1.0
    return A / A.sum(axis=1, keepdims=True)


def test_gibbs_matrix_examples():
    nb = cycle_neighborhoods(6)
    flat = gibbs_matrix(np.zeros(6), nb, 1.0).p
    for i in range(6):
        assert all(flat[i, j] == pytest.approx(0.5) for j in nb[i])
    P = gibbs_matrix(PSI, nb, 0.7)
    np.testing.assert_allclose(stationary_distribution(P), gibbs_distribution(PSI, 0.7), atol=1e-9)
    cold = stationary_distribution(gibbs_matrix(PSI, nb, 0.05))
    assert cold[np.argmin(PSI)] > 0.99


def test_gibbs_matrix_validation():
    with pytest.raises(ValidationError):
        gibbs_matrix(PSI, cycle_neighborhoods(6), 0.0)
    with pytest.raises(ValidationError):
        gibbs_matrix(PSI[:3], [[1], [2], [0]], 1.0)  # not symmetric
    with pytest.raises(ValidationError):
        gibbs_matrix(PSI[:3], [[1, 2], [0], [0]], 1.0)  # unequal sizes
    with pytest.raises(ValidationError):
        cycle_neighborhoods(2)


def test_push_step_examples():
    assert push_step(0, [], 0.8, 2.0, 0.25) == pytest.approx(0.6)
    assert push_step(0, [0.5, 0.3], 0.8, 2.0, 0.5) == pytest.approx(0.8 + 0.5 * (0.4 - 0.8))


def test_push_conditional_mean_by_enumeration():
    P = np.array([[0.2, 0.5, 0.3], [0.6, 0.1, 0.3], [0.3, 0.3, 0.4]])
    x = np.array([0.2, 0.5, 0.3])
    xbar, a = x.sum(), 0.1
    mean = np.zeros(3)
    for dest in itertools.product(range(3), repeat=3):
        w = np.prod([P[i, dest[i]] for i in range(3)])
        new = [push_step(j, [x[i] for i in range(3) if dest[i] == j], x[j], xbar, a) for j in range(3)]
        mean += w * np.array(new)
    np.testing.assert_allclose(mean, x + a * (P.T @ x / xbar - x), atol=1e-14)


def test_push_gossip_finds_gibbs_law():
    P = gibbs_matrix(PSI, cycle_neighborhoods(6), 1.0)
    rule = PushGossip(P)
    tr = run_many(rule, np.full(6, 1 / 6), StepSchedule.polynomial(1.0, 0.75), SYNC, NoiseModel.none(), 40000,
                  seeds=range(4), record_every=40000)
    target = gibbs_distribution(PSI, 1.0)
    for t in tr:
        assert t.sup_err[-1] / target.max() < 5e-2
        assert t.extras["mass"][-1] == pytest.approx(1.0, abs=0.02)


def test_pagerank_dense_against_eigenvector():
    P = chain(6)
    pi = pagerank_dense(P, 0.15)
    pair = perron_eigenpair(google_transpose(P, 0.15), alpha=np.ones(6))
    np.testing.assert_allclose(pi, pair.qstar, atol=1e-12)
    assert pair.lam == pytest.approx(1.0)
    np.testing.assert_allclose(pagerank_dense(P, 1.0), 1 / 6)


def test_pagerank_step_mean_is_google_drift():
    P = chain(4)
    rule = PageRankGossip(P, 0.2)
    x = np.array([0.1, 0.4, 0.3, 0.2])
    rows = rule.samplers["xi"]
    mean = np.zeros(4)
    for xi in itertools.product(range(4), repeat=4):
        w = np.prod([rows[i, xi[i]] for i in range(4)])
        if w > 0:
            mean += w * pagerank_step(x, np.array(xi), 0.1, 0.2, rule.qcheck)
    drift = google_transpose(P, 0.2) @ x / x.sum() - x
    # teleport enters as eps/d, which equals eps J x / sum(x)
    np.testing.assert_allclose((mean - x) / 0.1, drift, atol=1e-12)


@pytest.mark.parametrize("eps", [0.15, 1.0])
def test_pagerank_gossip_on_chain(eps):
    rule = PageRankGossip(chain(6), eps)
    tr = run_many(rule, np.full(6, 1 / 6), StepSchedule.harmonic(1.0), SYNC, NoiseModel.none(), 20000,
                  seeds=range(4), record_every=2000)
    for t in tr:
        assert t.extras["relErr"][-1] < 2e-2
        assert abs(t.extras["mass"][-1] - 1.0) < 0.02
    if eps == 1.0:
        np.testing.assert_allclose(rule.target, 1 / 6)


def test_hits_step_mean_and_star_oracle():
    A = np.zeros((4, 4))
    A[0, 1:] = A[1:, 0] = 1.0  # undirected star
    x = np.array([0.5, 1.0, 1.5, 2.0])
    r1, r2 = A.sum(axis=1), A.sum(axis=0)
    p1, p2 = A / r1[:, None], A.T / r2[:, None]
    mean = np.zeros(4)
    for xi1 in itertools.product(range(4), repeat=4):
        w1 = np.prod([p1[i, xi1[i]] for i in range(4)])
        if w1 == 0:
            continue
        for xi2 in itertools.product(range(4), repeat=4):
            w2 = np.prod([p2[i, xi2[i]] for i in range(4)])
            if w2:
                mean += w1 * w2 * hits_step(x, A, np.array(xi1), np.array(xi2), 0.1)
    np.testing.assert_allclose((mean - x) / 0.1, A.T @ A @ x / x.mean() - x, atol=1e-12)
    # A^T A splits into the hub and the leaves, so it has no unique Perron vector
    with pytest.raises(IrreducibilityError):
        HitsGossip(A)


def test_hits_regular_graph_is_uniform():
    d = 8
    A = np.zeros((d, d))
    for i in range(d):
        A[i, (i + 1) % d] = A[i, (i + 2) % d] = 1.0
    rule = HitsGossip(A)
    np.testing.assert_allclose(rule.target, rule.target[0])
    # relative gap of A^T A is small here; 1/n steps would decay only like n^-0.15
    tr = run_many(rule, np.random.default_rng(0).uniform(0.5, 1.5, d), StepSchedule.polynomial(1.0, 0.75), SYNC,
                  NoiseModel.none(), 20000, seeds=range(3), record_every=20000)
    assert all(t.extras["relErr"][-1] < 2e-2 for t in tr)


def test_hits_hubs_target_and_validation():
    rng = np.random.default_rng(1)
    A = (rng.random((6, 6)) < 0.5).astype(float)
    np.fill_diagonal(A, 0)
    A[np.arange(6), (np.arange(6) + 1) % 6] = 1.0
    hubs = HitsGossip(A, hubs=True)
    np.testing.assert_allclose(hubs.target, perron_eigenpair(A @ A.T).qstar)
    B = A.copy()
    B[:, 2] = 0
    with pytest.raises(ValidationError):
        HitsGossip(B)


def reputation_instance(d=6, seed=7):
    rng = np.random.default_rng(seed)
    W = rng.random((d, d)) * (rng.random((d, d)) < 0.5)
    W[np.arange(d), (np.arange(d) + 1) % d] += 0.3
    np.fill_diagonal(W, 0)
    P = W / W.sum(axis=1, keepdims=True)
    M = np.where(P > 0, rng.integers(1, 11, (d, d)), 0)
    return P, M


def test_reputation_step_examples():
    P, M = reputation_instance()
    x = np.ones(6)
    j = int(np.flatnonzero(P[0])[0])
    c = 3.0
    assert reputation_step(0, j, c * P[0, j], P, x, 1.0, 0.5) == pytest.approx(0.5 + 0.5 * c)
    zero = int(np.flatnonzero(P[0] == 0)[0])
    with pytest.raises(ValidationError):
        reputation_step(0, zero, 5, P, x, 1.0, 0.5)


def test_rating_windows_stay_on_scale():
    m = np.array([1, 2, 5, 9, 10])
    s = rating_spread(m, 3)
    np.testing.assert_array_equal(s, [0, 1, 3, 1, 0])
    assert np.all(m - s >= 1) and np.all(m + s <= 10)


def test_reputation_validation():
    P, M = reputation_instance()
    with pytest.raises(ValidationError):
        ReputationGossip(P, M + 0.5 * (M > 0))
    with pytest.raises(ValidationError):
        ReputationGossip(P, np.where(P > 0, 11, 0))
    with pytest.raises(ValidationError):
        ReputationGossip(P, np.ones((6, 6)))
    with pytest.raises(ValidationError):
        ReputationGossip(P, M, activity=np.zeros(6))


@pytest.mark.parametrize("activity", [None, np.linspace(1, 3, 6)])
def test_reputation_limit_is_perron_vector_of_DQ(activity):
    P, M = reputation_instance()
    rule = ReputationGossip(P, M, activity=activity, estimate="averaged")
    nu = np.ones(6) if activity is None else activity
    np.testing.assert_allclose(rule.target, perron_eigenpair((nu / nu.sum())[:, None] * M).qstar)
    tr = run_many(rule, np.ones(6), StepSchedule.polynomial(0.9, 0.6), SYNC, NoiseModel.none(), 60000,
                  seeds=range(4), record_every=60000)
    assert np.median([t.extras["relErr"][-1] for t in tr]) < 4e-2
