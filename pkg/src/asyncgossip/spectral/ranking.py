"""Ranking schemes built on Perron-eigenvector gossip.

* Gibbs sampler matrix for locating the minimizers of a node function.
* Push gossip: nodes send their value to a sampled neighbor instead of
  pulling, which computes the stationary law of the sampling matrix.
* PageRank in the teleport form with all-ones weights.
* HITS through two alternating pulls along A and A^T.
* A reputation network where one poller per tick rates a recommendation.
"""
from __future__ import annotations

import numpy as np

from ..engine import StepRule
from ..errors import GossipError, ValidationError
from ..netgraph import StochasticMatrixModel, perron_eigenpair, stationary_distribution
from .pf import _weights, decompose


def _stoch(P) -> StochasticMatrixModel:
    return P if isinstance(P, StochasticMatrixModel) else StochasticMatrixModel(P)


def _commit(x, new, tick):
    if tick.all_active:
        x[...] = new
    else:
        np.copyto(x, new, where=tick.active)


# ------------------------------------------------------------------ Gibbs

def cycle_neighborhoods(d: int, k: int = 1) -> list:
    """The k nearest nodes on each side along a ring."""
    if d < 2 * k + 1:
        raise ValidationError("ring too short for that neighborhood")
    return [sorted({(i + s) % d for s in range(-k, k + 1)} - {i}) for i in range(d)]


def gibbs_distribution(psi, C: float) -> np.ndarray:
    """exp(-psi / C) / Z."""
    if C <= 0:
        raise ValidationError("temperature must be positive")
    e = -np.asarray(psi, dtype=float) / C
    w = np.exp(e - e.max())
    return w / w.sum()


def gibbs_matrix(psi, neighborhoods, C: float) -> StochasticMatrixModel:
    """p(i, j) = exp(-(psi_j - psi_i)^+ / C) / N on the neighborhood of i, the
    remainder on the diagonal. Neighborhoods must be symmetric and of equal
    size N, which makes exp(-psi / C) / Z the stationary law."""
    if C <= 0:
        raise ValidationError("temperature must be positive")
    psi = np.asarray(psi, dtype=float)
    d = len(psi)
    if len(neighborhoods) != d:
        raise ValidationError("need one neighborhood per node")
    sizes = {len(set(nb)) for nb in neighborhoods}
    if len(sizes) != 1 or 0 in sizes:
        raise ValidationError("neighborhoods must be nonempty and share one size")
    N = sizes.pop()
    nbr = [set(int(j) for j in nb) for nb in neighborhoods]
    for i, nb in enumerate(nbr):
        if i in nb or any(not 0 <= j < d for j in nb):
            raise ValidationError(f"bad neighborhood for node {i}")
        if any(i not in nbr[j] for j in nb):
            raise ValidationError("neighborhoods must be symmetric")
    p = np.zeros((d, d))
    for i, nb in enumerate(nbr):
        for j in nb:
            p[i, j] = np.exp(-max(psi[j] - psi[i], 0.0) / C) / N
        p[i, i] = max(1.0 - p[i].sum(), 0.0)
    return StochasticMatrixModel(p)


# ------------------------------------------------------------------- push

def push_step(j: int, pushed_values, x_j: float, xbar: float, a: float) -> float:
    """x_j <- x_j + a (sum of values pushed to j / xbar - x_j)."""
    return x_j + a * (float(np.sum(pushed_values)) / xbar - x_j)


class PushGossip(StepRule):
    """Every node pushes its value to a neighbor drawn from row i of P; every
    node then updates with the sum it received. Normalizing by ``sum(x)``
    drives x to the stationary law of P."""

    name = "push"
    noisy = False

    def __init__(self, P):
        self.P = _stoch(P)
        self.samplers = {"xi": self.P.p}
        self.target = stationary_distribution(self.P)

    def step(self, state, tick):
        x = state["x"]
        R, d = x.shape
        dest = (tick.draws["xi"] + tick.offset).ravel()
        pushers = np.ones_like(x, dtype=bool) if tick.all_active else tick.active
        got = np.bincount(dest, weights=(x * pushers).ravel(), minlength=R * d).reshape(R, d)
        xbar = x.sum(axis=1, keepdims=True)
        x += tick.a * (got / xbar - x)

    def consensus(self, state):
        return state["x"].sum(axis=1)

    def extras(self, state):
        return {"mass": state["x"].sum(axis=1)}


# --------------------------------------------------------------- PageRank

def pagerank_dense(P, eps: float, tol: float = 1e-14, max_iter: int = 100_000) -> np.ndarray:
    """Power iteration for pi = (1 - eps) P^T pi + eps / d."""
    P = _stoch(P)
    if not 0.0 < eps <= 1.0:
        raise ValidationError("eps must lie in (0, 1]")
    d = P.d
    pi = np.full(d, 1.0 / d)
    for _ in range(max_iter):
        nxt = (1.0 - eps) * (P.p.T @ pi) + eps / d
        if np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = nxt
    return pi


def google_transpose(P, eps: float) -> np.ndarray:
    """(1 - eps) P^T + eps J with J = 11^T / d."""
    P = _stoch(P)
    return (1.0 - eps) * P.p.T + eps / P.d


def pagerank_step(x, xi, a: float, eps: float, qcheck, noise=None) -> np.ndarray:
    """x <- x + a ((1 - eps) qcheck x_xi / sum(x) + eps / d - x + noise).

    ``qcheck`` are the row sums of P^T (in-weights); xi samples the
    normalized rows of P^T.
    """
    x = np.asarray(x, dtype=float)
    d = len(x)
    m = 0.0 if noise is None else np.asarray(noise)
    return x + a * ((1.0 - eps) * np.asarray(qcheck) * x[np.asarray(xi)] / x.sum() + eps / d - x + m)


class PageRankGossip(StepRule):
    """PageRank by gossip: node i pulls from an in-neighbor j chosen in
    proportion to p(j, i) and adds the teleport term.

    Nodes without in-links only feel the teleport term.
    """

    name = "pagerank"

    def __init__(self, P, eps: float = 0.15):
        self.P = _stoch(P)
        if not 0.0 < eps <= 1.0:
            raise ValidationError("eps must lie in (0, 1]")
        self.eps = float(eps)
        qt = self.P.p.T
        self.qcheck = qt.sum(axis=1)
        d = self.P.d
        rows = np.where(self.qcheck[:, None] > 0, qt / np.where(self.qcheck > 0, self.qcheck, 1.0)[:, None],
                        np.full((d, d), 1.0 / d))
        self.samplers = {"xi": rows / rows.sum(axis=1, keepdims=True)}
        self.target = pagerank_dense(self.P, self.eps)

    def step(self, state, tick):
        x = state["x"]
        d = x.shape[1]
        pulled = tick.gather(x)
        xbar = x.sum(axis=1, keepdims=True)
        m = 0.0 if tick.noise is None else tick.noise
        new = x + tick.a * ((1.0 - self.eps) * self.qcheck * pulled / xbar + self.eps / d - x + m)
        _commit(x, new, tick)

    def consensus(self, state):
        return state["x"].sum(axis=1)

    def extras(self, state):
        x = state["x"]
        return {"mass": x.sum(axis=1),
                "relErr": np.max(np.abs(x - self.target), axis=1) / self.target.max()}

    def describe(self):
        return {"rule": self.name, "eps": self.eps, "pagerank": self.target.tolist()}


# ------------------------------------------------------------------- HITS

def hits_step(x, A, xi1, xi2, a: float, alpha=None) -> np.ndarray:
    """y_i = r1_i x_{xi1_i}; x_i <- x_i + a (r2_i y_{xi2_i} / xbar - x_i), with
    r1, r2 the row sums of A and A^T."""
    x = np.asarray(x, dtype=float)
    A = np.asarray(A, dtype=float)
    alpha = _weights(alpha, len(x))
    y = A.sum(axis=1) * x[np.asarray(xi1)]
    return x + a * (A.sum(axis=0) * y[np.asarray(xi2)] / (alpha @ x) - x)


class HitsGossip(StepRule):
    """Authority scores (Perron vector of A^T A); ``hubs=True`` swaps the roles
    of A and A^T to get the hub scores (Perron vector of A A^T)."""

    name = "hits"
    noisy = False

    def __init__(self, A, alpha=None, hubs: bool = False):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or np.any(A < 0):
            raise ValidationError("A must be a square nonnegative matrix")
        Q1, Q2 = (A.T, A) if hubs else (A, A.T)
        if np.any(Q1.sum(axis=1) <= 0) or np.any(Q2.sum(axis=1) <= 0):
            raise ValidationError("every node needs both an in-link and an out-link")
        self.hubs = hubs
        self.d1, self.d2 = decompose(Q1), decompose(Q2)
        self.alpha = _weights(alpha, A.shape[0])
        self.samplers = {"xi1": self.d1.P.p, "xi2": self.d2.P.p}
        M = Q2 @ Q1
        self.pair = perron_eigenpair(M, self.alpha)
        self.target = self.pair.qstar

    def step(self, state, tick):
        x = state["x"]
        y = self.d1.qcheck * tick.gather(x, "xi1")
        xbar = (x @ self.alpha)[:, None]
        new = x + tick.a * (self.d2.qcheck * tick.gather(y, "xi2") / xbar - x)
        _commit(x, new, tick)
        if np.any(x <= 0):
            raise GossipError(f"iterate left the positive orthant at tick {tick.n + 1}")

    def consensus(self, state):
        return state["x"] @ self.alpha

    def extras(self, state):
        x = state["x"]
        return {"lambda_est": x @ self.alpha,
                "relErr": np.max(np.abs(x - self.target), axis=1) / self.target.max()}

    def describe(self):
        return {"rule": self.name, "hubs": self.hubs, "lambda": self.pair.lam}


# ------------------------------------------------------------- reputation

RATING_MIN, RATING_MAX = 1, 10


def rating_spread(mean_ratings, spread: int = 3) -> np.ndarray:
    """Half-width of the uniform integer rating window around each mean,
    clipped so that the window stays inside 1..10 (which keeps the mean exact)."""
    m = np.asarray(mean_ratings)
    return np.minimum(np.minimum(m - RATING_MIN, RATING_MAX - m), spread).clip(min=0).astype(np.int64)


def reputation_step(i: int, j: int, rating: float, P, x, xbar: float, a: float) -> float:
    """New reputation of the poller i after rating j's recommendation:
    x_i + a (rating / p(i, j) * x_j / xbar - x_i)."""
    p = P.p if isinstance(P, StochasticMatrixModel) else np.asarray(P, dtype=float)
    if p[i, j] <= 0:
        raise ValidationError(f"node {i} never polls {j}")
    x = np.asarray(x, dtype=float)
    return x[i] + a * (rating / p[i, j] * x[j] / xbar - x[i])


class ReputationGossip(StepRule):
    """One poller per tick, chosen with probability proportional to
    ``activity``, rates a neighbor drawn from P with an integer score
    uniform around ``mean_ratings[i, j]``. Every node decays by ``(1 - a)``;
    the poller also gains ``a (q/p) x_j / xbar``. The limit is the Perron
    vector of ``diag(activity / sum) @ mean_ratings``.

    Run with synchronous activation (the poller is chosen inside the rule).
    ``estimate="averaged"`` reports the running average of the iterates,
    which removes most of the rating noise.
    """

    name = "reputation"
    noisy = False
    uniforms = ("poll", "rating")

    def __init__(self, P, mean_ratings, activity=None, alpha=None, spread: int = 3, estimate: str = "iterate"):
        if estimate not in ("iterate", "averaged"):
            raise ValidationError(f"unknown estimate source {estimate!r}")
        self.estimate = estimate
        self.P = _stoch(P)
        d = self.P.d
        Qm = np.asarray(mean_ratings, dtype=float)
        if Qm.shape != (d, d):
            raise ValidationError("mean_ratings must match P")
        if not np.array_equal(Qm > 0, self.P.p > 0):
            raise ValidationError("ratings must be given exactly on the support of P")
        on = Qm[Qm > 0]
        if np.any(on != np.round(on)) or np.any(on < RATING_MIN) or np.any(on > RATING_MAX):
            raise ValidationError("mean ratings must be integers in 1..10")
        nu = np.ones(d) if activity is None else np.asarray(activity, dtype=float)
        if nu.shape != (d,) or np.any(nu <= 0):
            raise ValidationError("activity must be a positive d-vector")
        self.mean_ratings = Qm
        self.activity = nu / nu.sum()
        self.spread = rating_spread(Qm, spread)
        self.alpha = _weights(alpha, d)
        self.samplers = {"xi": self.P.p}
        self._cum = np.cumsum(self.activity)
        self._ratio_scale = np.divide(1.0, self.P.p, out=np.zeros((d, d)), where=self.P.p > 0)
        self.pair = perron_eigenpair(self.activity[:, None] * Qm, self.alpha)
        self.target = self.pair.qstar

    def step(self, state, tick):
        x = state["x"]
        R, d = x.shape
        rr = np.arange(R)
        i = np.minimum(np.searchsorted(self._cum, tick.uniforms["poll"][:, 0], side="right"), d - 1)
        j = tick.draws["xi"][rr, i]
        s = self.spread[i, j]
        k = np.floor(tick.uniforms["rating"][rr, i] * (2 * s + 1)).astype(np.int64) - s
        rating = self.mean_ratings[i, j] + k
        xbar = x @ self.alpha
        gain = rating * self._ratio_scale[i, j] * x[rr, j] / xbar
        ai = tick.a if np.isscalar(tick.a) else tick.a[rr, i]
        x *= 1.0 - tick.a
        x[rr, i] += ai * gain
        if np.any(x <= 0):
            raise GossipError(f"iterate left the positive orthant at tick {tick.n + 1}")
        z = state["z"]
        z += (x - z) / (tick.n + 1.0)

    def init_state(self, x0, replicas):
        x = np.tile(np.asarray(x0, dtype=float), (replicas, 1))
        return {"x": x, "z": x.copy()}

    def tracked(self, state):
        return state["x"] if self.estimate == "iterate" else state["z"]

    def consensus(self, state):
        return self.tracked(state) @ self.alpha

    def extras(self, state):
        x = self.tracked(state)
        return {"lambda_est": x @ self.alpha,
                "relErr": np.max(np.abs(x - self.target), axis=1) / self.target.max()}

    def describe(self):
        return {"rule": self.name, "activity": self.activity.tolist(), "lambda": self.pair.lam,
                "estimate": self.estimate}
