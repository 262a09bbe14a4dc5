"""Gossip estimation of the Perron eigenvector of a nonnegative matrix.

Write ``Q = D P`` with D the diagonal of row sums and P stochastic. Node i
samples a neighbor xi from row i of P and sets

    x_i <- (1 - a) x_i + a q_i x_xi / xbar,        xbar = alpha @ x,

so the mean drift is ``Q x / xbar - x``, whose stable equilibrium is the
Perron vector q* scaled to ``alpha @ q* = lam``. ``alpha @ x`` therefore
estimates the Perron root.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import StepRule, StepSchedule
from ..errors import GossipError, ValidationError
from ..netgraph import NonnegativeMatrixModel, StochasticMatrixModel, perron_eigenpair


def _nonneg(Q) -> NonnegativeMatrixModel:
    return Q if isinstance(Q, NonnegativeMatrixModel) else NonnegativeMatrixModel(Q)


@dataclass(frozen=True, eq=False)
class QDecomposition:
    """``Q = diag(qcheck) @ P.p``. Iterates as ``(D, P)``."""

    Q: NonnegativeMatrixModel
    qcheck: np.ndarray
    P: StochasticMatrixModel

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.qcheck)

    def __iter__(self):
        return iter((self.D, self.P))


def decompose(Q) -> QDecomposition:
    Q = _nonneg(Q)  # rejects zero rows
    qc = Q.row_sums
    P = Q.q / qc[:, None]
    P = P / P.sum(axis=1, keepdims=True)
    return QDecomposition(Q=Q, qcheck=qc, P=StochasticMatrixModel(P))


def random_nonnegative_matrix(d: int, density: float, seed: int) -> np.ndarray:
    """Uniform[0, 1] entries on a random support with edge probability
    ``density``, plus a random directed cycle so the matrix is irreducible."""
    if d < 2 or not 0.0 <= density <= 1.0:
        raise ValidationError("need d >= 2 and density in [0, 1]")
    rng = np.random.default_rng(seed)
    q = rng.random((d, d)) * (rng.random((d, d)) < density)
    order = rng.permutation(d)
    q[order, np.roll(order, -1)] += rng.uniform(0.1, 1.0, d)
    return q


def _weights(alpha, d):
    if alpha is None:
        return np.full(d, 1.0 / d)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (d,) or np.any(alpha <= 0):
        raise ValidationError("alpha must be a positive d-vector")
    return alpha


def _xbar(x, alpha):
    xbar = float(alpha @ x)
    if not xbar > 0:
        raise GossipError(f"normalizer alpha @ x = {xbar} is not positive")
    return xbar


def pf_gossip_step(x, xi, a: float, alpha, qcheck) -> np.ndarray:
    """Synchronous update of every node; ``xi[i]`` is node i's sampled neighbor."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi)
    xbar = _xbar(x, np.asarray(alpha, dtype=float))
    return (1.0 - a) * x + a * np.asarray(qcheck) * x[xi] / xbar


def pf_async_step(i: int, nu_i: int, x, xi_i: int, schedule: StepSchedule, alpha, qcheck):
    """Update of node i alone with its own stepsize ``a(nu_i)``.

    Returns ``(new x_i, nu_i + 1)``.
    """
    x = np.asarray(x, dtype=float)
    a = schedule(nu_i)
    xbar = _xbar(x, np.asarray(alpha, dtype=float))
    return (1.0 - a) * x[i] + a * qcheck[i] * x[xi_i] / xbar, nu_i + 1


def pf_alt_normalization_step(x, xi, a: float, alpha, qcheck) -> np.ndarray:
    """x_i <- x_i + a (q_i x_xi - xbar x_i): the same equilibria, drift
    multiplied by xbar."""
    x = np.asarray(x, dtype=float)
    xbar = _xbar(x, np.asarray(alpha, dtype=float))
    return x + a * (np.asarray(qcheck) * x[np.asarray(xi)] - xbar * x)


def likelihood_ratios(P, Phat) -> np.ndarray:
    """p / phat on the support of p; phat must cover that support."""
    p = P.p if isinstance(P, StochasticMatrixModel) else np.asarray(P, dtype=float)
    ph = Phat.p if isinstance(Phat, StochasticMatrixModel) else np.asarray(Phat, dtype=float)
    if np.any((p > 0) & (ph <= 0)):
        raise ValidationError("sampling matrix must be positive wherever P is")
    return np.divide(p, ph, out=np.zeros_like(p), where=ph > 0)


def pf_mixed_sampling_step(x, xi, a: float, alpha, qcheck, ratios) -> np.ndarray:
    """Standard update with xi drawn from another matrix phat and the pulled
    value corrected by ``ratios[i, xi] = p / phat``."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi)
    xbar = _xbar(x, np.asarray(alpha, dtype=float))
    lr = np.asarray(ratios)[np.arange(len(x)), xi]
    return (1.0 - a) * x + a * np.asarray(qcheck) * lr * x[xi] / xbar


@dataclass(frozen=True)
class RatioBounds:
    """phi = max x/q*, mu = min x/q*, and K = phi(0)/mu(0) from the start."""

    phi: float
    mu: float
    K: float

    @classmethod
    def initial(cls, x0, qstar):
        r = np.asarray(x0, dtype=float) / np.asarray(qstar)
        return cls(phi=float(r.max()), mu=float(r.min()), K=float(r.max() / r.min()))

    def at(self, x, qstar) -> RatioBounds:
        r = np.asarray(x, dtype=float) / np.asarray(qstar)
        return RatioBounds(phi=float(r.max()), mu=float(r.min()), K=self.K)

    def state_bound(self, qstar) -> float:
        """sqrt(d) K max q*: bound on the Euclidean norm of the iterates."""
        q = np.asarray(qstar)
        return float(np.sqrt(len(q)) * self.K * q.max())


class PfGossip(StepRule):
    """Perron-eigenvector gossip.

    ``form="standard"`` uses the convex-combination update, ``form="alt"`` the
    ``q_i x_xi - xbar x_i`` drift. With ``Phat`` the neighbor is drawn from
    Phat and the pull is likelihood-ratio corrected. ``xbar="fast"`` replaces
    the global read ``alpha @ x`` by a per-node estimate u_i, tracked on a
    faster timescale by pulling from a node drawn from alpha:
    ``u_i <- u_i + b (x_zeta - u_i)`` with ``b = fast_schedule(n)``.
    """

    name = "pf"

    def __init__(self, Q, alpha=None, form: str = "standard", Phat=None, xbar: str = "exact",
                 fast_schedule: StepSchedule = StepSchedule.polynomial(1.0, 0.6)):
        self.dec = decompose(Q)
        d = self.dec.Q.d
        if not self.dec.Q.irreducible:
            raise ValidationError("Q must be irreducible")
        if form not in ("standard", "alt"):
            raise ValidationError(f"unknown form {form!r}")
        if xbar not in ("exact", "fast"):
            raise ValidationError(f"unknown xbar mode {xbar!r}")
        self.alpha = _weights(alpha, d)
        self.form, self.xbar_mode, self.fast_schedule = form, xbar, fast_schedule
        self.qcheck = self.dec.qcheck
        if Phat is None:
            self.ratios = None
            self.samplers = {"xi": self.dec.P.p}
        else:
            Phat = Phat if isinstance(Phat, StochasticMatrixModel) else StochasticMatrixModel(Phat)
            self.ratios = likelihood_ratios(self.dec.P, Phat)
            self.samplers = {"xi": Phat.p}
        if xbar == "fast":
            w = self.alpha / self.alpha.sum()
            self.samplers["zeta"] = np.tile(w, (d, 1))
        self.pair = perron_eigenpair(self.dec.Q, self.alpha)
        self.target = self.pair.qstar
        self.lam = self.pair.lam

    def init_state(self, x0, replicas):
        x0 = np.asarray(x0, dtype=float)
        if np.any(x0 <= 0):
            raise ValidationError("x0 must be entrywise positive")
        x = np.tile(x0, (replicas, 1))
        state = {"x": x}
        if self.xbar_mode == "fast":
            state["u"] = np.tile(x @ self.alpha, (x.shape[1], 1)).T.copy()
        return state

    def normalizer(self, state):
        """xbar as each node sees it, shape (R, 1) or (R, d)."""
        if self.xbar_mode == "fast":
            return state["u"]
        return (state["x"] @ self.alpha)[:, None]

    def step(self, state, tick):
        x = state["x"]
        xbar = self.normalizer(state)
        if np.any(xbar <= 0):
            raise GossipError(f"normalizer is not positive at tick {tick.n}")
        pulled = tick.gather(x)
        if self.ratios is not None:
            pulled = pulled * self.ratios[np.arange(x.shape[1]), tick.draws["xi"]]
        if tick.noise is not None:
            pulled = pulled + tick.noise
        a = tick.a
        if self.form == "standard":
            new = (1.0 - a) * x + a * self.qcheck * pulled / xbar
        else:
            new = x + a * (self.qcheck * pulled - xbar * x)
        if self.xbar_mode == "fast":
            u = state["u"]
            u += self.fast_schedule(tick.n) * (tick.gather(x, "zeta") - u)
        if tick.all_active:
            x[...] = new
        else:
            np.copyto(x, new, where=tick.active)
        if np.any(x <= 0):
            r, i = np.argwhere(x <= 0)[0]
            raise GossipError(f"iterate left the positive orthant at tick {tick.n + 1}, node {i}")

    def consensus(self, state):
        return state["x"] @ self.alpha

    def extras(self, state):
        x = state["x"]
        r = x / self.target
        return {"lambda_est": x @ self.alpha, "phi": r.max(axis=1), "mu": r.min(axis=1),
                "relErr": np.max(np.abs(x - self.target), axis=1) / self.target.max()}

    def describe(self):
        return {"rule": self.name, "form": self.form, "xbar": self.xbar_mode, "mixed": self.ratios is not None,
                "lambda": self.lam, "qstar": self.target.tolist()}
