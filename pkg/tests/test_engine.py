import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asyncgossip.avg_gossip import TWO_NODE_P, TWO_NODE_X0, VanillaGossip
from asyncgossip.engine import (
    ActivationProcess,
    NoiseModel,
    RngStream,
    StepRule,
    StepSchedule,
    multi_seed_aggregate,
    run,
    run_many,
    running_average_update,
    sample_rows,
    span_seminorm,
)
from asyncgossip.errors import NumericAbort, ValidationError

SYNC = ActivationProcess.synchronous()
QUIET = NoiseModel.none()


# --------------------------------------------------------------- schedules

def test_schedule_values():
    assert StepSchedule.constant(0.3)(17) == 0.3
    assert StepSchedule.harmonic(1.0)(0) == 1.0
    assert StepSchedule.harmonic(0.5)(9) == pytest.approx(0.05)
    hb = StepSchedule.harmonic_blocked(0.5, 10)
    assert [hb(n) for n in (0, 9, 10, 19, 20)] == [0.5, 0.5, 0.25, 0.25, 0.5 / 3]
    pw = StepSchedule.polynomial(1.0, 0.75)
    assert pw(15) == pytest.approx(16 ** -0.75)


def test_schedule_array_matches_scalar():
    n = np.arange(200)
    for s in (StepSchedule.constant(0.2), StepSchedule.harmonic(0.7),
              StepSchedule.harmonic_blocked(0.3, 7), StepSchedule.polynomial(0.9, 0.6)):
        np.testing.assert_allclose(s(n), [s(int(k)) for k in n], rtol=1e-15)


def test_schedule_validation():
    for bad in (lambda: StepSchedule.constant(0.0), lambda: StepSchedule.constant(1.0),
                lambda: StepSchedule.harmonic(1.5), lambda: StepSchedule.harmonic_blocked(0.5, 0),
                lambda: StepSchedule.polynomial(1.0, 0.5), lambda: StepSchedule("cubic", 0.1)):
        with pytest.raises(ValidationError):
            bad()


def test_schedule_round_trip():
    for s in (StepSchedule.constant(0.2), StepSchedule.harmonic_blocked(0.3, 7),
              StepSchedule.polynomial(0.9, 0.6)):
        assert StepSchedule.from_dict(s.to_dict()) == s


def test_decreasing_schedules_sum_conditions():
    # partial sums of a grow without bound while sums of a^2 level off
    n = np.arange(10**6)
    for s in (StepSchedule.harmonic(1.0), StepSchedule.harmonic_blocked(0.5, 10),
              StepSchedule.polynomial(1.0, 0.75)):
        a = s(n)
        assert a[: 10**5].sum() < a.sum() - 1.0
        assert (a[10**5:] ** 2).sum() < 1e-2
        assert s.decreasing


# -------------------------------------------------------------- activation

def test_bernoulli_frequency_within_binomial_band():
    rates = np.array([0.1, 0.5, 0.9])
    seen = np.zeros(3)
    horizon = 10**5

    class Count(StepRule):
        samplers = {}
        noisy = False
        target = np.zeros(3)

        def step(self, state, tick):
            seen[:] += tick.active[0]

    run(Count(), np.zeros(3), StepSchedule.constant(0.5), ActivationProcess.bernoulli(rates),
        QUIET, horizon, seed=3, record_every=horizon)
    sd = np.sqrt(horizon * rates * (1 - rates))
    assert np.all(np.abs(seen - horizon * rates) < 3 * sd)


def test_every_window_has_updates():
    means = 10 + np.arange(1, 6)
    act = ActivationProcess.periodic_random(means)
    np.testing.assert_allclose(act.update_probabilities(5), 1 / means)
    hits = []

    class Track(StepRule):
        samplers = {}
        noisy = False
        target = np.zeros(5)

        def step(self, state, tick):
            hits.append(tick.active[0].copy())

    run(Track(), np.zeros(5), StepSchedule.constant(0.5), act, QUIET, 5 * 10**4, seed=1, record_every=10**4)
    h = np.array(hits).reshape(5, 10**4, 5).sum(axis=1)
    assert np.all(h > 0)


def test_single_activation_one_node_per_tick():
    hits = []

    class Track(StepRule):
        samplers = {}
        noisy = False
        target = np.zeros(4)

        def step(self, state, tick):
            hits.append(tick.active.sum(axis=1))

    run_many(Track(), np.zeros(4), StepSchedule.constant(0.5), ActivationProcess.single([1, 2, 3, 4]),
             QUIET, 500, seeds=[0, 1], record_every=500)
    assert np.all(np.array(hits) == 1)


def test_activation_validation():
    with pytest.raises(ValidationError):
        ActivationProcess.bernoulli([0.5, 1.5])
    with pytest.raises(ValidationError):
        ActivationProcess.periodic_random([0.5])
    with pytest.raises(ValidationError):
        ActivationProcess.external(np.zeros((4, 3)))


# ------------------------------------------------------------------ noise

def test_awgn_moments():
    g = RngStream(12).substream("noise")
    w = g.standard_normal(10**5) * NoiseModel.awgn(0.25).sigma
    assert abs(w.mean()) < 0.02
    assert abs(w.var() - 0.25) < 0.05 * 0.25


def test_substreams_are_independent_of_each_other():
    a1 = RngStream(5).substream("a").random(4)
    RngStream(5).substream("b").random(100)
    a2 = RngStream(5).substream("a").random(4)
    np.testing.assert_array_equal(a1, a2)
    assert not np.array_equal(a1, RngStream(6).substream("a").random(4))


# ---------------------------------------------------------------- helpers

def test_span_seminorm():
    assert span_seminorm([0, 1]) == 1
    assert span_seminorm([2.5] * 4) == 0
    assert span_seminorm([3, -1, 2]) == 4
    with pytest.raises(ValidationError):
        span_seminorm([])


def test_running_average_update():
    np.testing.assert_array_equal(running_average_update([0.0], [1.0], 0), [1.0])
    np.testing.assert_array_equal(running_average_update([1.0, 2.0], [1.0, 2.0], 9), [1.0, 2.0])
    np.testing.assert_array_equal(running_average_update([0, 0], [2, 4], 1), [1, 2])
    with pytest.raises(ValidationError):
        running_average_update([0], [1], -1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40))
def test_running_average_is_mean(xs):
    z = np.array([0.0])
    for n, x in enumerate(xs):
        z = running_average_update(z, [x], n)
    assert z[0] == pytest.approx(np.mean(xs), rel=1e-9, abs=1e-9)


def test_sample_rows_law():
    P = np.array([[0.2, 0.8, 0.0], [0.0, 0.0, 1.0], [0.3, 0.3, 0.4]])
    cdf = np.cumsum(P, axis=1)
    cdf[:, -1] = 1.0
    u = np.random.default_rng(0).random((20000, 3))
    s = sample_rows(cdf, u)
    for i in range(3):
        freq = np.bincount(s[:, i], minlength=3) / len(s)
        np.testing.assert_allclose(freq, P[i], atol=0.015)
        assert np.all(P[i, s[:, i]] > 0)


# -------------------------------------------------------------------- run

def test_synchronous_vanilla_contracts_geometrically():
    # the expected-pull form of the rule is exactly x <- x + a (P x - x)
    tr = run(VanillaGossip(TWO_NODE_P, TWO_NODE_X0, sampled=False), TWO_NODE_X0, StepSchedule.constant(0.9),
             SYNC, QUIET, 30, seed=0)
    err = tr.sup_err
    ratios = err[6:20] / err[5:19]
    assert np.all(ratios <= 0.9)


def test_run_validation():
    rule = VanillaGossip(TWO_NODE_P, TWO_NODE_X0)
    with pytest.raises(ValidationError):
        run(rule, TWO_NODE_X0, StepSchedule.constant(0.5), SYNC, QUIET, 0, seed=0)
    with pytest.raises(ValidationError):
        run(rule, [0, 1, 2], StepSchedule.constant(0.5), SYNC, QUIET, 10, seed=0)
    with pytest.raises(ValidationError):
        run(rule, TWO_NODE_X0, StepSchedule.constant(0.5), ActivationProcess.bernoulli([0.5] * 3),
            QUIET, 10, seed=0)


def test_same_seed_same_csv():
    rule = VanillaGossip(TWO_NODE_P, TWO_NODE_X0)
    args = (rule, TWO_NODE_X0, StepSchedule.harmonic(1.0), ActivationProcess.bernoulli([0.5, 1.0]),
            NoiseModel.awgn(0.25), 2000)
    a = run(*args, seed=9, record_every=7).csv_text()
    b = run(*args, seed=9, record_every=7).csv_text()
    c = run(*args, seed=10, record_every=7).csv_text()
    assert a == b and a != c
    assert a.splitlines()[0] == "n,supErr,spanErr,consensus,zSupErr"


def test_batched_replicas_match_single_runs():
    rule = VanillaGossip(TWO_NODE_P, TWO_NODE_X0)
    args = (rule, TWO_NODE_X0, StepSchedule.harmonic(1.0), ActivationProcess.bernoulli([0.5, 1.0]),
            NoiseModel.awgn(0.25), 3000)
    many = run_many(*args, seeds=[3, 4, 5], record_every=100)
    one = run(*args, seed=4, record_every=100)
    assert many[1].csv_text() == one.csv_text()


def test_records_are_monotone_and_include_end():
    tr = run(VanillaGossip(TWO_NODE_P, TWO_NODE_X0), TWO_NODE_X0, StepSchedule.constant(0.5), SYNC,
             QUIET, 25, seed=0, record_every=10)
    assert list(tr.n) == [0, 10, 20, 25]


def test_numeric_abort_reports_tick_and_node():
    class Blowup(StepRule):
        samplers = {}
        noisy = False
        target = np.zeros(2)

        def step(self, state, tick):
            if tick.n == 4:
                state["x"][:, 1] = np.nan

    with pytest.raises(NumericAbort) as info:
        run(Blowup(), np.zeros(2), StepSchedule.constant(0.5), SYNC, QUIET, 10, seed=42)
    assert info.value.tick == 5 and info.value.node == 1 and info.value.seed == 42


def test_local_clock_uses_own_update_count():
    seen = []

    class Probe(StepRule):
        samplers = {}
        noisy = False
        target = np.zeros(2)

        def step(self, state, tick):
            seen.append((np.array(tick.a[0], copy=True), tick.active[0].copy()))

    run(Probe(), np.zeros(2), StepSchedule.harmonic(1.0), ActivationProcess.bernoulli([0.3, 1.0]),
        QUIET, 200, seed=0, local_clock=True)
    nu = np.zeros(2)
    for a, act in seen:
        np.testing.assert_allclose(a, 1.0 / (nu + 1))
        nu += act


def test_external_feed_drives_updates():
    feed = np.array([[0, 1], [1, 0], [0, 1]] * 10)
    tr = run(VanillaGossip(TWO_NODE_P, TWO_NODE_X0), TWO_NODE_X0, StepSchedule.constant(0.5),
             ActivationProcess.external(feed), QUIET, 30, seed=0)
    assert tr.span_err[-1] < tr.span_err[0]
    with pytest.raises(ValidationError):
        run(VanillaGossip(TWO_NODE_P, TWO_NODE_X0), TWO_NODE_X0, StepSchedule.constant(0.5),
            ActivationProcess.external(feed), QUIET, 31, seed=0)


def test_first_below():
    tr = run(VanillaGossip(TWO_NODE_P, TWO_NODE_X0, sampled=False), TWO_NODE_X0, StepSchedule.constant(0.5),
             SYNC, QUIET, 100, seed=0)
    k = tr.first_below(1e-3)
    assert k is not None and tr.sup_err[k] < 1e-3 and tr.sup_err[k - 1] >= 1e-3
    assert tr.first_below(-1.0) is None


# -------------------------------------------------------------- aggregate

def _fake(cons, seed=0, **meta):
    from asyncgossip.engine import RunTrace
    n = np.arange(len(cons))
    z = np.zeros(len(cons))
    return RunTrace(n=n, sup_err=z, span_err=z, consensus=np.asarray(cons, float), extras={},
                    final={}, metadata={"rule": "x", **meta, "seed": seed})


def test_aggregate_single_and_pair():
    s = multi_seed_aggregate([_fake([0.1, 0.2])])
    np.testing.assert_array_equal(s.mean["consensus"], [0.1, 0.2])
    np.testing.assert_array_equal(s.std["consensus"], [0, 0])
    s = multi_seed_aggregate([_fake([0.0, 0.2], 1), _fake([0.0, 0.3], 2)])
    assert s.mean["consensus"][-1] == pytest.approx(0.25)
    assert s.csv_text().splitlines()[0].startswith("n,supErr_mean")


def test_aggregate_rejects_mixed_configs():
    with pytest.raises(ValidationError):
        multi_seed_aggregate([_fake([0, 1], 1, horizon=1), _fake([0, 1], 2, horizon=2)])
    with pytest.raises(ValidationError):
        multi_seed_aggregate([])


def test_alias_sampler_law_and_support():
    from asyncgossip.engine import AliasSampler
    rng = np.random.default_rng(4)
    P = rng.random((5, 5)) * (rng.random((5, 5)) < 0.6)
    P[:, 0] += 0.05
    P /= P.sum(axis=1, keepdims=True)
    s = AliasSampler(P).draw(rng.random((100_000, 5)))
    for i in range(5):
        freq = np.bincount(s[:, i], minlength=5) / len(s)
        np.testing.assert_allclose(freq, P[i], atol=0.006)
        assert np.all(P[i, s[:, i]] > 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(0, 2**31))
def test_alias_tables_reproduce_rows_exactly(d, seed):
    from asyncgossip.engine import AliasSampler
    rng = np.random.default_rng(seed)
    P = rng.random((d, d)) * (rng.random((d, d)) < 0.5)
    P[np.arange(d), rng.integers(0, d, d)] += 0.1
    P /= P.sum(axis=1, keepdims=True)
    a = AliasSampler(P)
    # probability mass implied by the tables: direct acceptance plus aliased remainder
    mass = np.zeros((d, d))
    for i in range(d):
        for k in range(d):
            mass[i, k] += a.accept[i, k] / d
            mass[i, a.alias[i, k]] += (1 - a.accept[i, k]) / d
    np.testing.assert_allclose(mass, P, atol=1e-12)
