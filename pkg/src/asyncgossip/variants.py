"""Two modifications of pull gossip.

Two-hop pulls: with probability ``alpha`` node i takes the current value of
its sampled neighbor j, otherwise it takes the copy of some k that j pulled
earlier (k drawn from j's row of P). With fresh copies this is sampling from
``alpha P + (1 - alpha) P^2``, which keeps the stationary law of P and has a
smaller second eigenvalue.

Importance sampling: poll with Q instead of P and multiply the pulled value
by the likelihood ratio ``p/q``. The square-root rule minimizes
``sum p/q`` row by row.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import AliasSampler, StepRule
from .errors import ValidationError
from .netgraph import StochasticMatrixModel, second_eigenvalue_modulus, solve_poisson, stationary_distribution


def _model(P) -> StochasticMatrixModel:
    return P if isinstance(P, StochasticMatrixModel) else StochasticMatrixModel(P)


def _step_scale(scale, d):
    if scale is None:
        return None
    s = np.asarray(scale, dtype=float)
    if s.shape != (d,) or np.any(s <= 0):
        raise ValidationError("step_scale must be a positive per-node vector")
    return s


# ---------------------------------------------------------------- multihop

def multihop_matrix(P, alpha: float) -> StochasticMatrixModel:
    """alpha P + (1 - alpha) P^2."""
    P = _model(P)
    if not 0.0 < alpha <= 1.0:
        raise ValidationError("alpha must lie in (0, 1]")
    m = alpha * P.p + (1.0 - alpha) * (P.p @ P.p)
    m = m / m.sum(axis=1, keepdims=True)  # clears round-off only
    return StochasticMatrixModel(m)


def mixed_second_eigenvalue(P, alpha: float) -> float:
    """max |alpha l + (1 - alpha) l^2| over the eigenvalues l != 1 of P."""
    P = _model(P)
    ev = np.linalg.eigvals(P.p)
    k = int(np.argmin(np.abs(ev - 1.0)))
    rest = np.delete(ev, k)
    return float(np.max(np.abs(alpha * rest + (1 - alpha) * rest ** 2))) if rest.size else 0.0


def multihop_pull(P, i: int, x, stored, rng: np.random.Generator, alpha: float, mode: str = "stored"):
    """One two-stage pull for node i.

    ``stored[j, k]`` is j's copy of x_k (NaN when j never pulled from k).
    Returns ``(value, source, cold)`` where ``cold`` flags a two-hop pull that
    found no stored copy and fell back to the fresh value.
    """
    P = _model(P)
    j = int(rng.choice(P.d, p=P.p[i]))
    if rng.random() < alpha:
        return float(x[j]), j, False
    k = int(rng.choice(P.d, p=P.p[j]))
    if mode == "fresh":
        return float(x[k]), k, False
    if mode != "stored":
        raise ValidationError(f"unknown staleness mode {mode!r}")
    v = stored[j, k]
    if np.isnan(v):
        return float(x[k]), k, True
    return float(v), k, False


class MultihopGossip(StepRule):
    """Pull gossip (plain averaging or relative value iteration) with two-hop pulls.

    ``staleness="stored"``: node j keeps the last value it received from each
    neighbor and refreshes it only when it pulls from that neighbor directly.
    ``staleness="fresh"``: the second hop reads the current value.

    With ``base="rvi"`` the target is the Poisson solution of the effective
    matrix (same stationary average, different relative values).
    """

    name = "multihop"
    uniforms = ("branch", "hop")

    def __init__(self, P, x0, alpha: float = 0.8, staleness: str = "stored", base: str = "rvi",
                 i0: int = 0, step_scale=None, estimate: str = "iterate"):
        self.model = _model(P)
        d = self.model.d
        self.c = np.asarray(x0, dtype=float)
        if self.c.shape != (d,):
            raise ValidationError("x0 and P dimensions differ")
        if staleness not in ("stored", "fresh"):
            raise ValidationError(f"unknown staleness mode {staleness!r}")
        if base not in ("rvi", "vanilla"):
            raise ValidationError(f"unknown base rule {base!r}")
        if estimate not in ("iterate", "averaged"):
            raise ValidationError(f"unknown estimate source {estimate!r}")
        self.alpha = float(alpha)
        self.effective = multihop_matrix(self.model, alpha)
        self.staleness, self.base, self.i0, self.estimate = staleness, base, int(i0), estimate
        self.scale = _step_scale(step_scale, d)
        self.samplers = {"xi": self.model.p}
        self.hop = AliasSampler(self.model.p)
        self.beta = float(stationary_distribution(self.model) @ self.c)
        self.primary = "y" if base == "rvi" else "x"
        if base == "rvi":
            self.target = solve_poisson(self.effective, self.c, self.i0).V
        else:
            self.target = np.full(d, self.beta)

    def init_state(self, x0, replicas):
        v = np.tile(np.asarray(x0, dtype=float), (replicas, 1))
        d = self.model.d
        return {self.primary: v, "z": v.copy(), "stored": np.full((replicas, d, d), np.nan),
                "cold": np.zeros(replicas)}

    def step(self, state, tick):
        x = state[self.primary]
        R, d = x.shape
        j = tick.draws["xi"]
        direct = tick.uniforms["branch"] < self.alpha
        k = self.hop.draw_rows(j, tick.uniforms["hop"])
        rr = np.arange(R)[:, None]
        fresh_k = x[rr, k]
        if self.staleness == "fresh":
            two = fresh_k
        else:
            cached = state["stored"][rr, j, k]
            cold = np.isnan(cached)
            two = np.where(cold, fresh_k, cached)
            state["cold"] += (cold & ~direct & tick.active).sum(axis=1)
        pulled = np.where(direct, x[rr, j], two)
        if tick.noise is not None:
            pulled = pulled + tick.noise
        a = tick.a if self.scale is None else tick.a * self.scale
        if self.base == "rvi":
            new = x + a * (pulled + self.c - x[:, self.i0:self.i0 + 1] - x)
        else:
            new = x + a * (pulled - x)
        if self.staleness == "stored":
            refresh = direct & tick.active
            ri, ci = np.nonzero(refresh)
            state["stored"][ri, ci, j[ri, ci]] = pulled[ri, ci]
        if tick.all_active:
            x[...] = new
        else:
            np.copyto(x, new, where=tick.active)
        z = state["z"]
        z += (x - z) / (tick.n + 1.0)

    def estimate_of(self, state):
        src = state[self.primary] if self.estimate == "iterate" else state["z"]
        return src[:, self.i0] if self.base == "rvi" else src.mean(axis=1)

    def consensus(self, state):
        return self.estimate_of(state)

    def extras(self, state):
        est = self.estimate_of(state)
        return {"estimate": est, "estErr": np.abs(est - self.beta),
                "zSupErr": np.max(np.abs(state["z"] - self.target), axis=1),
                "cold_start": state["cold"]}

    def describe(self):
        return {"rule": self.name, "alpha": self.alpha, "staleness": self.staleness, "base": self.base,
                "i0": self.i0, "beta": self.beta,
                "lambda2_P": second_eigenvalue_modulus(self.model),
                "lambda2_effective": second_eigenvalue_modulus(self.effective)}


# ------------------------------------------------------ importance sampling

@dataclass(frozen=True, eq=False)
class ImportanceModel:
    """Target matrix P, polling matrix Q on the same support, and the
    likelihood ratios ``p/q`` (zero off the support)."""

    P: StochasticMatrixModel
    Q: StochasticMatrixModel

    def __post_init__(self):
        object.__setattr__(self, "P", _model(self.P))
        object.__setattr__(self, "Q", _model(self.Q))
        if self.P.d != self.Q.d:
            raise ValidationError("P and Q differ in size")
        if not np.array_equal(self.P.p > 0, self.Q.p > 0):
            raise ValidationError("P and Q must share the same support")

    @property
    def ratios(self) -> np.ndarray:
        q = self.Q.p
        return np.divide(self.P.p, q, out=np.zeros_like(q), where=q > 0)


def optimal_importance_matrix(P) -> StochasticMatrixModel:
    """q(i, j) = sqrt(p(i, j)) / sum_k sqrt(p(i, k))."""
    P = _model(P)
    r = np.sqrt(P.p)
    return StochasticMatrixModel(r / r.sum(axis=1, keepdims=True))


def importance_cost(P, Q) -> float:
    """sum over the support of p(i, j) / q(i, j)."""
    m = ImportanceModel(P, Q)
    return float(m.ratios.sum())


def importance_pull_step(P, Q, i: int, x, xi: int, a: float, w: float = 0.0) -> float:
    """(1 - a) x_i + a (p/q)(i, xi) (x_xi + w)."""
    P, Q = _model(P), _model(Q)
    if not 0.0 < a <= 1.0:
        raise ValidationError("stepsize must lie in (0, 1]")
    if Q.p[i, xi] <= 0 or P.p[i, xi] <= 0:
        raise ValidationError(f"likelihood ratio undefined at ({i}, {xi})")
    x = np.asarray(x, dtype=float)
    return (1.0 - a) * x[i] + a * (P.p[i, xi] / Q.p[i, xi]) * (x[xi] + w)


def pulled_moments(P, Q, i: int, x):
    """Mean and variance of the corrected pulled value ``(p/q) x_xi`` with xi ~ q(i, .).

    With Q = P this is the plain pull.
    """
    m = ImportanceModel(P, Q)
    x = np.asarray(x, dtype=float)
    q = m.Q.p[i]
    v = m.ratios[i] * x
    mean = float(q @ v)
    return mean, float(q @ (v - mean) ** 2)


class ImportanceGossip(StepRule):
    """Pull averaging with polling matrix Q and likelihood-ratio correction,
    plus the running average z. Plain P-sampling when Q is None."""

    name = "importance"

    def __init__(self, P, x0, Q=None, step_scale=None):
        P = _model(P)
        self.imp = ImportanceModel(P, P if Q is None else Q)
        self.x0 = np.asarray(x0, dtype=float)
        if self.x0.shape != (P.d,):
            raise ValidationError("x0 and P dimensions differ")
        self.scale = _step_scale(step_scale, P.d)
        self.samplers = {"xi": self.imp.Q.p}
        self._ratio = self.imp.ratios
        self.beta = float(stationary_distribution(P) @ self.x0)
        self.target = np.full(P.d, self.beta)

    def init_state(self, x0, replicas):
        x = np.tile(np.asarray(x0, dtype=float), (replicas, 1))
        return {"x": x, "z": x.copy()}

    def step(self, state, tick):
        x = state["x"]
        xi = tick.draws["xi"]
        pulled = tick.gather(x)
        if tick.noise is not None:
            pulled = pulled + tick.noise
        lr = self._ratio[np.arange(x.shape[1]), xi]
        a = tick.a if self.scale is None else tick.a * self.scale
        new = x + a * (lr * pulled - x)
        if tick.all_active:
            x[...] = new
        else:
            np.copyto(x, new, where=tick.active)
        z = state["z"]
        z += (x - z) / (tick.n + 1.0)

    def extras(self, state):
        return {"zSupErr": np.max(np.abs(state["z"] - self.beta), axis=1)}

    def describe(self):
        return {"rule": self.name, "beta": self.beta, "cost": importance_cost(self.imp.P, self.imp.Q),
                "plain": bool(np.array_equal(self.imp.P.p, self.imp.Q.p))}
