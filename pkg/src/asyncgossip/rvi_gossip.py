"""Relative value iteration gossip.

Each node keeps a relative value ``y_i`` and updates

    y_i <- (1 - a) y_i + a (y_xi + w + x0_i - f(y))

where ``f(y)`` is the anchor value ``y[i0]`` or a weighted average
``kappa @ y`` that a faster gossip iterate estimates. The iterates solve the
Poisson equation ``V = P V + x0 - beta 1``, so ``f(y)`` converges to the
stationary average ``beta = eta @ x0`` whatever the update rates of the
nodes are.

The finite-time helpers (:class:`RviErrorModel`, :func:`expected_error_curve`,
:func:`concentration_bound`) describe the error ``e(n) = y(n) - V*`` of the
synchronous constant-stepsize scheme.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import StepRule
from .errors import IrreducibilityError, ValidationError
from .netgraph import StochasticMatrixModel, solve_poisson, stationary_distribution


def _model(P) -> StochasticMatrixModel:
    return P if isinstance(P, StochasticMatrixModel) else StochasticMatrixModel(P)


def rvi_step(P, i: int, y, xi: int, a: float, x0, i0: int = 0, w: float = 0.0) -> float:
    """New y_i: (1-a) y_i + a (y_xi + w + x0_i - y_i0)."""
    P = _model(P)
    if not 0.0 < a < 1.0:
        raise ValidationError("stepsize must lie in (0, 1)")
    if P.p[i, xi] <= 0:
        raise ValidationError(f"node {i} sampled {xi}, outside the support of p({i}, .)")
    y = np.asarray(y, dtype=float)
    return (1.0 - a) * y[i] + a * (y[xi] + w + x0[i] - y[i0])


def rvi_f_step(P, y, u, active, xi, zeta, a, x0, *, mode="anchor", i0=0, kappa=None,
               b=None, w=None):
    """One tick of relative value iteration with a pluggable offset ``f``.

    ``mode="anchor"``: f(y) = y[i0]; ``u`` is passed through untouched.
    ``mode="weighted"``: the fast iterate moves as ``u_i <- u_i + b (y_zeta_i - u_i)``
    and f is read as ``kappa @ u``. Because ``kappa`` is stationary for the
    matrix that draws ``zeta``, ``kappa @ u`` tracks ``kappa @ y``.

    Returns ``(y_next, u_next)``.
    """
    P = _model(P)
    y = np.asarray(y, dtype=float)
    xi = np.asarray(xi, dtype=np.int64)
    active = np.asarray(active, dtype=bool)
    if np.any(P.p[np.arange(P.d), xi][active] <= 0):
        raise ValidationError("a sampled neighbor lies outside the support of P")
    pulled = y[xi] + (0.0 if w is None else np.asarray(w, dtype=float))
    if mode == "anchor":
        ref = y[i0]
        u_next = u
    elif mode == "weighted":
        if kappa is None or b is None:
            raise ValidationError("weighted mode needs kappa and the fast stepsize b")
        u = np.asarray(u, dtype=float)
        ref = float(kappa @ u)
        u_next = u + b * (y[np.asarray(zeta, dtype=np.int64)] - u)
    else:
        raise ValidationError(f"unknown f mode {mode!r}")
    new = (1.0 - a) * y + a * (pulled + np.asarray(x0, dtype=float) - ref)
    return np.where(active, new, y), u_next


class RviGossip(StepRule):
    """Relative value iteration as an engine step rule.

    ``x0`` is the cost vector whose stationary average is sought; the initial
    ``y`` is whatever the engine is given. In weighted mode the fast iterate
    ``u`` starts equal to ``y`` and is updated at every node every tick with
    stepsize ``b = min(1, fast_ratio * a)``.

    ``estimate="averaged"`` reports the offset read from the running average
    ``z`` instead of ``y``; with a polynomial stepsize this is the
    Polyak-Ruppert estimate, whose variance is markedly lower than that of
    the raw iterate.
    """

    name = "rvi"
    primary = "y"

    def __init__(self, P, x0, i0: int = 0, mode: str = "anchor", R=None, fast_ratio: float = 10.0,
                 estimate: str = "iterate"):
        self.model = _model(P)
        if estimate not in ("iterate", "averaged"):
            raise ValidationError(f"unknown estimate source {estimate!r}")
        self.estimate = estimate
        d = self.model.d
        self.c = np.asarray(x0, dtype=float)
        if self.c.shape != (d,):
            raise ValidationError("x0 and P dimensions differ")
        if not 0 <= i0 < d:
            raise ValidationError(f"anchor {i0} outside 0..{d - 1}")
        self.i0 = i0
        self.mode = mode
        self.fast_ratio = float(fast_ratio)
        self.poisson = solve_poisson(self.model, self.c, i0)
        self.beta = self.poisson.beta
        self.samplers = {"xi": self.model.p}
        if mode == "anchor":
            self.kappa = None
            self.target = self.poisson.V
        elif mode == "weighted":
            self.R = self.model if R is None else _model(R)
            if not self.R.irreducible:
                raise IrreducibilityError("fast-gossip matrix R must be irreducible")
            self.kappa = stationary_distribution(self.R)
            self.samplers["zeta"] = self.R.p
            # the solution of the Poisson equation with kappa @ V = beta
            V = self.poisson.V
            self.target = V + (self.beta - self.kappa @ V)
        else:
            raise ValidationError(f"unknown f mode {mode!r}")

    def init_state(self, x0, replicas):
        y = np.tile(np.asarray(x0, dtype=float), (replicas, 1))
        st = {"y": y, "z": y.copy()}
        if self.mode == "weighted":
            st["u"] = y.copy()
        return st

    def reference(self, state) -> np.ndarray:
        if self.mode == "anchor":
            return state["y"][:, self.i0]
        return (state["u"] * self.kappa).sum(axis=1)

    def estimate_of(self, state) -> np.ndarray:
        if self.estimate == "iterate":
            return self.reference(state)
        z = state["z"]
        return z[:, self.i0] if self.mode == "anchor" else z @ self.kappa

    def step(self, state, tick):
        y = state["y"]
        a = tick.a
        ref = self.reference(state)
        pulled = tick.gather(y)
        if tick.noise is not None:
            pulled += tick.noise
        new = y + a * (pulled + self.c - ref[:, None] - y)
        if self.mode == "weighted":
            u = state["u"]
            b = np.minimum(1.0, self.fast_ratio * np.asarray(a))
            u += b * (tick.gather(y, "zeta") - u)
        if tick.all_active:
            y[...] = new
        else:
            np.copyto(y, new, where=tick.active)
        z = state["z"]
        z += (y - z) / (tick.n + 1.0)

    def consensus(self, state):
        return self.estimate_of(state)

    def extras(self, state):
        est = self.estimate_of(state)
        y = state["y"]
        return {
            "estimate": est,
            "estErr": np.abs(est - self.beta),
            "mse_vs_Vstar": np.mean((y - self.target) ** 2, axis=1),
            "zSupErr": np.max(np.abs(state["z"] - self.target), axis=1),
        }

    def describe(self):
        return {"rule": self.name, "mode": self.mode, "i0": self.i0, "beta": self.beta,
                "estimate": self.estimate, "fast_ratio": self.fast_ratio if self.mode == "weighted" else None}


# ------------------------------------------------------- finite-time error

def error_matrix(P, i0: int = 0) -> np.ndarray:
    """A = P - I - 1 e_i0^T, the drift matrix of the error recursion."""
    P = _model(P)
    A = P.p - np.eye(P.d)
    A[:, i0] -= 1.0
    return A


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(M, dtype=float)))))


def operator_norm_sum(A, a: float, tail_tol: float = 1e-12, max_terms: int = 10_000_000):
    """Sum over k >= 0 of the spectral norm of ``(I + aA)^k``.

    Summation stops once a rigorous geometric bound on the remaining tail is
    below ``tail_tol``: if ``q = ||M^K|| < 1`` then for N a multiple of K the
    tail from N on is at most ``S_K q^(N/K) / (1 - q)`` with ``S_K`` the sum of
    the first K terms. Returns ``(C, terms_used)``.
    """
    A = np.asarray(A, dtype=float)
    M = np.eye(A.shape[0]) + a * A
    if spectral_radius(M) >= 1.0:
        raise ValidationError("rho(I + aA) >= 1: the norm series diverges")
    power = np.eye(A.shape[0])
    total = 0.0
    K = None
    S_K = q = None
    k = 0
    while k < max_terms:
        nk = float(np.linalg.norm(power, 2))
        if K is None and k >= 1 and nk < 1.0:
            K, q, S_K = k, nk, total
        total += nk
        k += 1
        power = power @ M
        if K is not None and k % K == 0:
            tail = S_K * q ** (k // K) / (1.0 - q)
            if tail < tail_tol:
                return total, k
    raise ValidationError("norm series did not reach the tail tolerance")


@dataclass(frozen=True, eq=False)
class RviErrorModel:
    A: np.ndarray
    a: float
    C: float
    rho: float
    terms: int

    @classmethod
    def build(cls, P, a: float, i0: int = 0):
        if not 0.0 < a < 1.0:
            raise ValidationError("stepsize must lie in (0, 1)")
        A = error_matrix(P, i0)
        rho = spectral_radius(np.eye(A.shape[0]) + a * A)
        C, terms = operator_norm_sum(A, a)
        return cls(A=A, a=a, C=C, rho=rho, terms=terms)


def expected_error_curve(A, a: float, e0, n: int) -> np.ndarray:
    """E[e(n)] = (I + aA)^n e(0)."""
    A = np.asarray(A, dtype=float)
    M = np.eye(A.shape[0]) + a * A
    return np.linalg.matrix_power(M, int(n)) @ np.asarray(e0, dtype=float)


def concentration_bound(A, a: float, x0, K: float, C: float | None = None) -> float:
    """Upper bound ``2d exp(-K^2 / (4 C d^2 ||x0||_inf))`` on
    ``Pr(||e(n) - E e(n)|| >= K a)``, with C the operator-norm sum."""
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    if C is None:
        C, _ = operator_norm_sum(A, a)
    xinf = float(np.max(np.abs(x0)))
    if xinf == 0.0:
        return 0.0
    return 2.0 * d * math.exp(-K * K / (4.0 * C * d * d * xinf))
