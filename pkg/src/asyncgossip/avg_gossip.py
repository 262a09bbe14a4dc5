"""Averaging by pull gossip: the deterministic scheme, its sampled
(stochastic approximation) version, and the asynchronous variant.

The asynchronous variant reaches consensus, but when nodes update at
different rates the consensus value is biased away from the stationary
average ``eta @ x0``. :func:`rate_weighted_consensus` predicts where it lands.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import ActivationProcess, NoiseModel, StepRule, StepSchedule, run_many
from .errors import ValidationError
from .netgraph import StochasticMatrixModel, stationary_distribution

TWO_NODE_P = np.array([[0.7, 0.3], [0.5, 0.5]])
TWO_NODE_X0 = np.array([0.0, 1.0])
TWO_NODE_RATES = (0.5, 1.0)  # node 2 updates twice as fast as node 1


def _model(P) -> StochasticMatrixModel:
    return P if isinstance(P, StochasticMatrixModel) else StochasticMatrixModel(P)


def sync_gossip_step(x, P) -> np.ndarray:
    """x(n+1) = P x(n)."""
    P = _model(P)
    x = np.asarray(x, dtype=float)
    if x.shape != (P.d,):
        raise ValidationError(f"x has shape {x.shape}, P is {P.d}x{P.d}")
    return P.p @ x


def _check_support(P, i, xi):
    if P.p[i, xi] <= 0:
        raise ValidationError(f"node {i} sampled {xi}, which is outside the support of p({i}, .)")


def sa_pull_step(P, i: int, x, xi: int, a: float, w: float = 0.0) -> float:
    """New value of x_i after node i pulls from ``xi``: (1-a) x_i + a (x_xi + w)."""
    P = _model(P)
    if not 0.0 < a <= 1.0:
        raise ValidationError("stepsize must lie in (0, 1]")
    _check_support(P, i, xi)
    x = np.asarray(x, dtype=float)
    return (1.0 - a) * x[i] + a * (x[xi] + w)


def async_step(P, x, active, xi, a: float, w=None) -> np.ndarray:
    """Apply :func:`sa_pull_step` at every active node; others keep their value.

    ``xi`` holds one sampled neighbor per node (entries of inactive nodes are
    ignored) and ``w`` the matching noise samples.
    """
    P = _model(P)
    x = np.asarray(x, dtype=float)
    active = np.asarray(active, dtype=bool)
    xi = np.asarray(xi, dtype=np.int64)
    w = np.zeros(P.d) if w is None else np.asarray(w, dtype=float)
    out = x.copy()
    for i in np.flatnonzero(active):
        out[i] = sa_pull_step(P, int(i), x, int(xi[i]), a, float(w[i]))
    return out


def rate_weighted_consensus(P, rates, x0) -> float:
    """Mean consensus of asynchronous vanilla gossip when node i acts with
    per-tick probability ``rates[i]``.

    ``pi @ x`` is a martingale for the mean dynamics ``x + a diag(r)(P - I) x``
    when ``pi`` solves ``pi diag(r) (P - I) = 0``; solved here directly.
    """
    P = _model(P)
    r = np.asarray(rates, dtype=float)
    gen = np.diag(r) @ (P.p - np.eye(P.d))
    a = gen.T.copy()
    a[-1, :] = 1.0
    rhs = np.zeros(P.d)
    rhs[-1] = 1.0
    pi = np.linalg.solve(a, rhs)
    return float(pi @ np.asarray(x0, dtype=float))


class VanillaGossip(StepRule):
    """Pull gossip ``x_i <- (1-a) x_i + a (x_xi + w)`` at active nodes, with the
    running average ``z`` carried alongside.

    The tracked vector is x, measured against ``(eta @ x0) * 1``. With
    ``sampled=False`` the pull is replaced by its conditional mean, giving the
    deterministic relaxation ``x <- x + a (P x - x)``.
    """

    name = "vanilla"

    def __init__(self, P, x0, sampled: bool = True):
        self.model = _model(P)
        self.sampled = bool(sampled)
        self.x0 = np.asarray(x0, dtype=float)
        if self.x0.shape != (self.model.d,):
            raise ValidationError("x0 and P dimensions differ")
        self.samplers = {"xi": self.model.p} if self.sampled else {}
        self.noisy = self.sampled
        self.eta = stationary_distribution(self.model)
        self.beta = float(self.eta @ self.x0)
        self.target = np.full(self.model.d, self.beta)

    def init_state(self, x0, replicas):
        x = np.tile(np.asarray(x0, dtype=float), (replicas, 1))
        return {"x": x, "z": x.copy()}

    def step(self, state, tick):
        x = state["x"]
        if self.sampled:
            pulled = tick.gather(x)
        else:
            pulled = x @ self.model.p.T
        if tick.noise is not None:
            pulled += tick.noise
        new = x + tick.a * (pulled - x)
        if tick.all_active:
            x[...] = new
        else:
            np.copyto(x, new, where=tick.active)
        z = state["z"]
        z += (x - z) / (tick.n + 1.0)

    def extras(self, state):
        return {"zSupErr": np.max(np.abs(state["z"] - self.beta), axis=1)}

    def describe(self):
        return {"rule": self.name, "beta": self.beta, "sampled": self.sampled}


@dataclass(eq=False)
class WrongConsensusSummary:
    finals: np.ndarray
    converged: np.ndarray
    prediction: float
    true_average: float
    seeds: list

    @property
    def mean(self) -> float:
        return float(self.finals.mean())

    @property
    def std(self) -> float:
        return float(self.finals.std())


def consensus_tick(span, n, tol=1e-6, sustain=1000):
    """First recorded tick at which ``span < tol`` holds for ``sustain``
    further ticks, or None."""
    n = np.asarray(n)
    below = np.asarray(span) < tol
    k = 0
    while k < len(n):
        if below[k]:
            j = k
            while j + 1 < len(n) and below[j + 1]:
                j += 1
            if n[j] - n[k] >= sustain:
                return int(n[k])
            k = j + 1
        else:
            k += 1
    return None


DEFAULT_WRONG_CONSENSUS_SCHEDULE = StepSchedule.harmonic_blocked(0.02, 1000)


def wrong_consensus_experiment(seeds=200, *, P=TWO_NODE_P, x0=TWO_NODE_X0, rates=TWO_NODE_RATES,
                               schedule=DEFAULT_WRONG_CONSENSUS_SCHEDULE, horizon=4000,
                               noise=NoiseModel.none(), first_seed=0, tol=1e-6, sustain=1000):
    """Run asynchronous vanilla gossip to consensus for many seeds.

    ``seeds`` is a count (seeds ``first_seed ..``) or an explicit list. A seed
    that has not held ``span < tol`` for ``sustain`` ticks by the horizon is
    flagged in ``converged``.
    """
    seed_list = list(range(first_seed, first_seed + seeds)) if isinstance(seeds, int) else list(seeds)
    rule = VanillaGossip(P, x0)
    traces = run_many(rule, x0, schedule, ActivationProcess.bernoulli(rates), noise,
                      horizon, seed_list, record_every=1)
    finals = np.array([t.consensus[-1] for t in traces])
    converged = np.array([consensus_tick(t.span_err, t.n, tol, sustain) is not None for t in traces])
    return WrongConsensusSummary(finals=finals, converged=converged,
                                 prediction=rate_weighted_consensus(P, rates, x0),
                                 true_average=rule.beta, seeds=seed_list)
