import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asyncgossip.avg_gossip import (
    TWO_NODE_P,
    TWO_NODE_RATES,
    TWO_NODE_X0,
    VanillaGossip,
    async_step,
    consensus_tick,
    rate_weighted_consensus,
    sa_pull_step,
    sync_gossip_step,
    wrong_consensus_experiment,
)
from asyncgossip.engine import ActivationProcess, NoiseModel, StepSchedule, run, run_many, span_seminorm
from asyncgossip.errors import ValidationError


def test_sync_step_examples():
    np.testing.assert_allclose(sync_gossip_step(TWO_NODE_X0, TWO_NODE_P), [0.3, 0.5])
    np.testing.assert_allclose(sync_gossip_step([2.0, 2.0], TWO_NODE_P), [2.0, 2.0])
    x = TWO_NODE_X0.astype(float)
    for _ in range(100):
        x = sync_gossip_step(x, TWO_NODE_P)
    np.testing.assert_allclose(x, 0.375, atol=1e-10)
    with pytest.raises(ValidationError):
        sync_gossip_step([0, 1, 2], TWO_NODE_P)


def test_sa_pull_examples():
    assert sa_pull_step(TWO_NODE_P, 0, [0.0, 1.0], 1, 1.0) == 1.0
    assert sa_pull_step(TWO_NODE_P, 0, [0.0, 1.0], 1, 0.5) == 0.5
    with pytest.raises(ValidationError):
        sa_pull_step([[0.0, 1.0], [1.0, 0.0]], 0, [0.0, 1.0], 0, 0.5)
    with pytest.raises(ValidationError):
        sa_pull_step(TWO_NODE_P, 0, [0.0, 1.0], 1, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=2), st.floats(0.01, 1.0))
def test_sa_pull_conditional_mean(x, a):
    x = np.array(x)
    for i in range(2):
        mean = sum(TWO_NODE_P[i, j] * sa_pull_step(TWO_NODE_P, i, x, j, a) for j in range(2))
        assert mean == pytest.approx((1 - a) * x[i] + a * (TWO_NODE_P @ x)[i], abs=1e-12)


def test_async_step_extremes():
    x = np.array([0.2, 0.9])
    np.testing.assert_array_equal(async_step(TWO_NODE_P, x, [0, 0], [1, 0], 0.5), x)
    full = async_step(TWO_NODE_P, x, [1, 1], [1, 0], 0.5)
    np.testing.assert_allclose(full, [sa_pull_step(TWO_NODE_P, 0, x, 1, 0.5), sa_pull_step(TWO_NODE_P, 1, x, 0, 0.5)])


def test_noiseless_async_span_and_max_norm_never_increase():
    rng = np.random.default_rng(0)
    P = rng.random((6, 6))
    P /= P.sum(axis=1, keepdims=True)
    x0 = rng.random(6)
    checks = []

    def observe(n, state):
        x = state["x"][0]
        checks.append((span_seminorm(x), np.max(np.abs(x - 0.5))))

    rule = VanillaGossip(P, x0)
    run(rule, x0, StepSchedule.harmonic(1.0), ActivationProcess.bernoulli([0.3] * 6), NoiseModel.none(),
        3000, seed=1, observer=observe)
    s = np.array(checks)
    assert np.all(np.diff(s[:, 0]) <= 1e-15)
    assert np.all(np.diff(s[:, 1]) <= 1e-15)


def test_convexity_bounds_hold():
    lo, hi = [], []
    rule = VanillaGossip(TWO_NODE_P, TWO_NODE_X0)

    def observe(n, state):
        lo.append(state["x"].min())
        hi.append(state["x"].max())

    run_many(rule, TWO_NODE_X0, StepSchedule.harmonic(1.0), ActivationProcess.bernoulli(TWO_NODE_RATES),
             NoiseModel.none(), 2000, seeds=range(5), observer=observe)
    assert min(lo) >= 0.0 and max(hi) <= 1.0


def test_consensus_reached_for_every_seed():
    traces = run_many(VanillaGossip(TWO_NODE_P, TWO_NODE_X0), TWO_NODE_X0, StepSchedule.harmonic_blocked(0.5, 20),
                      ActivationProcess.bernoulli(TWO_NODE_RATES), NoiseModel.none(), 3000, seeds=range(10))
    assert all(t.span_err[-1] < 1e-3 for t in traces)


def test_rate_weighted_prediction():
    assert rate_weighted_consensus(TWO_NODE_P, [1, 2], TWO_NODE_X0) == pytest.approx(3 / 13, abs=1e-14)
    # equal rates leave the stationary average in place
    assert rate_weighted_consensus(TWO_NODE_P, [1, 1], TWO_NODE_X0) == pytest.approx(0.375, abs=1e-14)


def test_consensus_tick():
    span = np.r_[np.ones(5), np.zeros(3), np.ones(2), np.zeros(20)]
    n = np.arange(len(span))
    assert consensus_tick(span, n, sustain=5) == 10
    assert consensus_tick(span, n, sustain=100) is None


def test_wrong_consensus_small():
    summ = wrong_consensus_experiment(40)
    assert summ.converged.all()
    assert summ.prediction == pytest.approx(3 / 13)
    assert abs(summ.mean - 3 / 13) < 0.03
    assert abs(summ.mean - 0.375) > 0.1
    lo, hi = np.quantile(summ.finals, [0.01, 0.99])
    assert lo < 0.2306 < hi


def test_symmetric_rates_symmetric_matrix_gives_plain_mean():
    P = np.array([[0.5, 0.5], [0.5, 0.5]])
    summ = wrong_consensus_experiment(60, P=P, rates=(1.0, 1.0))
    assert abs(summ.mean - 0.5) < 0.02
    assert summ.true_average == pytest.approx(0.5)


def test_noise_leaves_vanilla_wandering_but_z_settles():
    rule = VanillaGossip(TWO_NODE_P, TWO_NODE_X0)
    tr = run_many(rule, TWO_NODE_X0, StepSchedule.harmonic(1.0), ActivationProcess.synchronous(),
                  NoiseModel.awgn(0.25), 20000, seeds=range(8), record_every=1000)
    # the running average varies much less over the last half than x does
    for t in tr:
        z = t.extras["zSupErr"][10:]
        assert np.ptp(z) < 0.1
