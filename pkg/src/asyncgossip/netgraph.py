"""Graph and matrix substrate, plus dense reference computations.

Everything here is a pure function of its inputs. The dense solvers
(stationary distributions, Poisson equation, Perron eigenpairs) are the
ground truth that every stochastic scheme in the package is checked against,
so they deliberately avoid any sampling.

Nodes are 0-based in the Python API. The plain-text edge-list format on disk
is 1-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, reduce
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import IrreducibilityError, ValidationError

ROW_SUM_TOL = 1e-12
RESIDUAL_TOL = 1e-9


def _as_square(m, name="matrix"):
    m = np.array(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise ValidationError(f"{name} must be a non-empty square 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} has non-finite entries")
    if np.any(m < 0):
        raise ValidationError(f"{name} has negative entries")
    m.setflags(write=False)
    return m


def support_is_irreducible(m) -> bool:
    """True when the directed support graph of ``m`` is strongly connected."""
    m = np.asarray(m)
    if m.shape[0] == 1:
        return True
    n_comp, _ = connected_components(csr_matrix(m > 0), directed=True, connection="strong")
    return n_comp == 1


def support_period(m) -> int:
    """Period of an irreducible support graph (gcd of cycle lengths).

    Uses BFS levels from node 0: the period is the gcd over all edges (u, v)
    of ``level[u] + 1 - level[v]``.
    """
    m = np.asarray(m)
    if not support_is_irreducible(m):
        raise IrreducibilityError("period is only defined for irreducible support")
    adj = csr_matrix(m > 0)
    order, pred = breadth_first_order(adj, 0, directed=True, return_predecessors=True)
    level = np.zeros(m.shape[0], dtype=np.int64)
    for v in order[1:]:
        level[v] = level[pred[v]] + 1
    rows, cols = adj.nonzero()
    diffs = np.abs(level[rows] + 1 - level[cols])
    return int(reduce(math.gcd, diffs.tolist(), 0))


@dataclass(frozen=True, eq=False)
class Graph:
    """Directed graph on nodes ``0..d-1``; an undirected edge is stored as
    both ordered pairs."""

    d: int
    edges: frozenset
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1:
            raise ValidationError("graph needs at least one node")
        for i, j in self.edges:
            if not (0 <= i < self.d and 0 <= j < self.d):
                raise ValidationError(f"edge {(i, j)} has an endpoint outside 0..{self.d - 1}")
            if i == j:
                raise ValidationError(f"self-loop {(i, j)} is not an edge")

    @classmethod
    def from_support(cls, m, **meta):
        m = np.asarray(m)
        rows, cols = np.nonzero(m > 0)
        return cls(m.shape[0], frozenset((int(i), int(j)) for i, j in zip(rows, cols) if i != j), meta)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.d, self.d))
        for i, j in self.edges:
            a[i, j] = 1.0
        return a

    def is_strongly_connected(self) -> bool:
        return support_is_irreducible(self.adjacency())

    def neighbors(self, i) -> list[int]:
        return sorted(j for (k, j) in self.edges if k == i)


@dataclass(frozen=True, eq=False)
class StochasticMatrixModel:
    """Row-stochastic sampling matrix ``p``; row ``i`` is node ``i``'s polling law."""

    p: np.ndarray

    def __post_init__(self):
        p = _as_square(self.p, "P")
        err = np.max(np.abs(p.sum(axis=1) - 1.0))
        if err > ROW_SUM_TOL:
            raise ValidationError(f"P rows must sum to 1 (max deviation {err:.3e})")
        object.__setattr__(self, "p", p)

    @classmethod
    def from_weights(cls, w):
        """Normalize the rows of a nonnegative weight matrix."""
        w = _as_square(w, "weights")
        s = w.sum(axis=1, keepdims=True)
        if np.any(s <= 0):
            raise ValidationError("every row needs a positive weight to normalize")
        return cls(w / s)

    @property
    def d(self) -> int:
        return self.p.shape[0]

    @cached_property
    def irreducible(self) -> bool:
        return support_is_irreducible(self.p)

    @cached_property
    def period(self) -> int:
        return support_period(self.p)

    @property
    def aperiodic(self) -> bool:
        return self.irreducible and self.period == 1

    @cached_property
    def cdf(self) -> np.ndarray:
        """Row-wise cumulative sums, last column pinned to exactly 1."""
        c = np.cumsum(self.p, axis=1)
        c[:, -1] = 1.0
        return c

    def graph(self) -> Graph:
        return Graph.from_support(self.p)


@dataclass(frozen=True, eq=False)
class NonnegativeMatrixModel:
    """Nonnegative matrix ``q`` with strictly positive row sums."""

    q: np.ndarray

    def __post_init__(self):
        q = _as_square(self.q, "Q")
        if np.any(q.sum(axis=1) <= 0):
            raise ValidationError("every row of Q needs a positive entry")
        object.__setattr__(self, "q", q)

    @property
    def d(self) -> int:
        return self.q.shape[0]

    @property
    def row_sums(self) -> np.ndarray:
        return self.q.sum(axis=1)

    @cached_property
    def irreducible(self) -> bool:
        return support_is_irreducible(self.q)


@dataclass(frozen=True, eq=False)
class PoissonSolution:
    V: np.ndarray
    beta: float
    anchor: int
    residual: float


@dataclass(frozen=True, eq=False)
class PerronPair:
    lam: float
    qstar: np.ndarray
    alpha: np.ndarray
    residual: float


def _stochastic(P) -> StochasticMatrixModel:
    return P if isinstance(P, StochasticMatrixModel) else StochasticMatrixModel(P)


def _nonnegative(Q) -> NonnegativeMatrixModel:
    return Q if isinstance(Q, NonnegativeMatrixModel) else NonnegativeMatrixModel(Q)


def stationary_distribution(P) -> np.ndarray:
    """Unique stationary law ``eta`` of an irreducible chain, by a dense solve.

    Replaces one balance equation of ``(P^T - I) eta = 0`` by the
    normalization ``sum(eta) = 1``.
    """
    P = _stochastic(P)
    if not P.irreducible:
        raise IrreducibilityError("stationary distribution needs an irreducible P")
    d = P.d
    a = P.p.T - np.eye(d)
    a[-1, :] = 1.0
    rhs = np.zeros(d)
    rhs[-1] = 1.0
    eta = np.linalg.solve(a, rhs)
    return eta


def second_eigenvalue_modulus(P) -> float:
    """Largest ``|lambda|`` over the spectrum of P with one copy of 1 removed."""
    P = _stochastic(P)
    if P.d == 1:
        return 0.0
    ev = np.linalg.eigvals(P.p)
    k = int(np.argmin(np.abs(ev - 1.0)))
    rest = np.delete(ev, k)
    return float(min(1.0, np.max(np.abs(rest))))


def solve_poisson(P, c, i0: int = 0) -> PoissonSolution:
    """Solve ``V = P V + c - beta 1`` with the normalization ``V[i0] = beta``.

    ``beta`` is the stationary average ``eta @ c``. One (redundant) balance
    row is replaced by the anchor condition.
    """
    P = _stochastic(P)
    c = np.asarray(c, dtype=float)
    if c.shape != (P.d,):
        raise ValidationError(f"cost vector must have shape ({P.d},), got {c.shape}")
    if not 0 <= i0 < P.d:
        raise ValidationError(f"anchor {i0} outside 0..{P.d - 1}")
    eta = stationary_distribution(P)
    beta = float(eta @ c)
    d = P.d
    m = np.eye(d) - P.p
    rhs = c - beta
    m[i0, :] = 0.0
    m[i0, i0] = 1.0
    rhs[i0] = beta
    V = np.linalg.solve(m, rhs)
    res = float(np.max(np.abs(V - P.p @ V - c + beta)))
    return PoissonSolution(V=V, beta=beta, anchor=i0, residual=res)


def _check_alpha(alpha, d):
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (d,):
        raise ValidationError(f"alpha must have shape ({d},), got {alpha.shape}")
    if np.any(alpha <= 0):
        raise ValidationError("alpha must be entrywise positive")
    return alpha


def perron_eigenpair(Q, alpha=None) -> PerronPair:
    """Perron root and positive eigenvector of an irreducible nonnegative Q,
    scaled so that ``alpha @ qstar == lam``.

    ``alpha`` defaults to the uniform weights ``1/d``. Weights need not sum
    to one here (the PageRank form uses all-ones weights).
    """
    Q = _nonnegative(Q)
    if not Q.irreducible:
        raise IrreducibilityError("Perron eigenpair needs an irreducible Q")
    d = Q.d
    alpha = np.full(d, 1.0 / d) if alpha is None else _check_alpha(alpha, d)
    ev, vecs = np.linalg.eig(Q.q)
    k = int(np.argmax(ev.real))
    lam = float(ev[k].real)
    v = np.abs(vecs[:, k].real)
    if lam <= 0 or np.any(v <= 0):
        raise ValidationError("Perron vector is not strictly positive; Q may be reducible")
    v = v * (lam / (alpha @ v))
    # a couple of power steps tidy up eigensolver round-off
    for _ in range(2):
        v = Q.q @ v
        v = v * (lam / (alpha @ v))
    res = float(np.max(np.abs(Q.q @ v - lam * v)) / lam)
    return PerronPair(lam=lam, qstar=v, alpha=alpha, residual=res)


def power_method(Q, alpha=None, iters: int = 10_000, x0=None) -> np.ndarray:
    """Normalized power iteration ``q <- Q q / (alpha @ Q q)``.

    At the fixed point ``alpha @ q == 1``; multiply by the Perron root to get
    the ``alpha @ q == lam`` scaling.
    """
    Q = _nonnegative(Q)
    d = Q.d
    alpha = np.full(d, 1.0 / d) if alpha is None else _check_alpha(alpha, d)
    q = np.ones(d) if x0 is None else np.asarray(x0, dtype=float)
    for _ in range(iters):
        t = Q.q @ q
        q = t / (alpha @ t)
    return q


def erdos_renyi_model(d: int, p_edge: float, seed: int, max_retries: int = 1000):
    """Connected Erdos-Renyi graph with symmetric uniform[0, 1] weights,
    rows normalized into a stochastic matrix.

    A disconnected sample is discarded and regenerated with ``seed + 1``;
    the seed actually used and the retry count land in ``graph.meta``.
    """
    if d < 2:
        raise ValidationError("need d >= 2")
    if not 0.0 < p_edge <= 1.0:
        raise ValidationError("p_edge must lie in (0, 1]")
    for retry in range(max_retries + 1):
        s = seed + retry
        rng = np.random.default_rng(s)
        iu = np.triu_indices(d, k=1)
        present = rng.random(iu[0].size) < p_edge
        weights = rng.random(iu[0].size)
        w = np.zeros((d, d))
        w[iu] = np.where(present, weights, 0.0)
        w = w + w.T
        if np.any(w.sum(axis=1) <= 0) or not support_is_irreducible(w):
            continue
        model = StochasticMatrixModel.from_weights(w)
        graph = Graph.from_support(w, seed=seed, seed_used=s, retries=retry,
                                   p_edge=p_edge, undirected_edges=int(present.sum()))
        return graph, model
    raise ValidationError(f"no connected sample after {max_retries} retries")


# ---------------------------------------------------------------- file I/O

def write_edge_list(m, path) -> None:
    """Write ``i j weight`` lines (1-based) for every positive entry."""
    m = np.asarray(m, dtype=float)
    rows, cols = np.nonzero(m)
    with open(path, "w") as fh:
        fh.write(f"# d={m.shape[0]}\n")
        for i, j in zip(rows, cols):
            fh.write(f"{i + 1} {j + 1} {m[i, j]:.17g}\n")


def read_edge_list(path, d: int | None = None) -> np.ndarray:
    """Read an ``i j weight`` edge list into a dense matrix.

    The dimension comes from ``d``, else from a ``# d=<n>`` header, else from
    the largest index seen. Repeated pairs are an error.
    """
    entries = {}
    header_d = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line[1:].strip().startswith("d="):
                header_d = int(line[1:].strip()[2:])
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValidationError(f"{path}:{lineno}: expected 'i j weight'")
        i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
        if i < 1 or j < 1:
            raise ValidationError(f"{path}:{lineno}: indices are 1-based")
        if (i, j) in entries:
            raise ValidationError(f"{path}:{lineno}: duplicate entry {(i, j)}")
        entries[(i, j)] = w
    n = d or header_d or max((max(i, j) for i, j in entries), default=0)
    m = np.zeros((n, n))
    for (i, j), w in entries.items():
        if i > n or j > n:
            raise ValidationError(f"index {(i, j)} exceeds dimension {n}")
        m[i - 1, j - 1] = w
    return m


def write_dense_csv(m, path) -> None:
    np.savetxt(path, np.asarray(m, dtype=float), delimiter=",", fmt="%.17g")


def read_dense_csv(path) -> np.ndarray:
    m = np.loadtxt(path, delimiter=",", ndmin=2)
    return m
