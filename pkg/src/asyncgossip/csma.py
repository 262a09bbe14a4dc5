"""CSMA/CA-constrained activation.

Links are ordered pairs ``(i, j)``: when link ``(i, j)`` switches on, node i
pulls from node j. Only certain sets of links may be on together (the
feasible family). Each inactive link whose activation keeps the set feasible
switches on at rate ``R_ij``; each active link switches off at rate 1. The
stationary law of this chain is

    phi(s) ∝ prod over l in s of R_l,

and with ``R_ij = exp(zeta_ij - sum_k p(i,k) zeta_ik)`` the multipliers zeta
can be tuned so that the conditional frequency with which node i uses link
``(i, j)`` is ``p(i, j)``. :func:`learn_multipliers` does this by stochastic
gradient steps on block counts; :func:`solve_entropy_program` computes the
same target distribution directly as an oracle.
"""
from __future__ import annotations

import bisect
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .engine import ActivationProcess, NoiseModel, RngStream, StepSchedule, run
from .errors import GossipError, ValidationError
from .netgraph import StochasticMatrixModel
from .rvi_gossip import RviGossip

EXPONENT_CAP = 50.0
ENUMERATION_LIMIT = 100_000


class CsmaRateWarning(RuntimeWarning):
    """A link-rate exponent hit the +-50 cap."""


class InfeasibleProgram(ValidationError):
    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


def _model(P) -> StochasticMatrixModel:
    return P if isinstance(P, StochasticMatrixModel) else StochasticMatrixModel(P)


# ---------------------------------------------------------------- families

def _independent_sets(L, nbrs, limit):
    """All independent sets of the conflict graph, or None past ``limit``."""
    out = [()]
    stack = [((), 0, frozenset())]
    while stack:
        cur, start, blocked = stack.pop()
        for l in range(start, L):
            if l in blocked:
                continue
            s = cur + (l,)
            out.append(s)
            if len(out) > limit:
                return None
            stack.append((s, l + 1, blocked | nbrs[l]))
    out.sort(key=lambda s: (len(s), s))
    return out


@dataclass(frozen=True, eq=False)
class ActivationFamily:
    """Links plus the family of link sets allowed to be active together.

    ``sets`` lists the feasible sets (tuples of link indices, ``sets[0] == ()``)
    when the family is small enough to enumerate; for large families it is None
    and feasibility is decided from the pairwise ``conflicts`` relation.
    """

    links: tuple
    conflicts: frozenset | None
    sets: tuple | None
    d: int

    def __post_init__(self):
        if len(set(self.links)) != len(self.links):
            raise ValidationError("duplicate links")
        for i, j in self.links:
            if i == j or not (0 <= i < self.d and 0 <= j < self.d):
                raise ValidationError(f"bad link ({i}, {j}) for {self.d} nodes")
        if self.sets is not None:
            index = {s: k for k, s in enumerate(self.sets)}
            if () not in index:
                raise ValidationError("the empty set must be feasible")
            for s in self.sets:
                for pos in range(len(s)):
                    if s[:pos] + s[pos + 1:] not in index:
                        raise ValidationError(f"family is not closed under removal at {s}")
            object.__setattr__(self, "_index", index)

    @classmethod
    def from_conflicts(cls, links, conflicts=None, d=None, limit=ENUMERATION_LIMIT):
        """Family of conflict-free link sets.

        ``conflicts`` is a list of conflicting pairs, given either as pairs of
        link indices or as pairs of links. By default, two links conflict when
        they share an endpoint.
        """
        links = tuple((int(i), int(j)) for i, j in links)
        d = (max(max(l) for l in links) + 1 if links else 0) if d is None else int(d)
        L = len(links)
        pos = {l: k for k, l in enumerate(links)}
        pairs = set()
        if conflicts is None:
            touching = {}
            for k, (i, j) in enumerate(links):
                touching.setdefault(i, []).append(k)
                touching.setdefault(j, []).append(k)
            for group in touching.values():
                for x in range(len(group)):
                    for y in range(x + 1, len(group)):
                        pairs.add((min(group[x], group[y]), max(group[x], group[y])))
        else:
            for a, b in conflicts:
                if not np.isscalar(a):
                    a, b = pos[tuple(a)], pos[tuple(b)]
                a, b = int(a), int(b)
                if a == b or not (0 <= a < L and 0 <= b < L):
                    raise ValidationError(f"bad conflict pair ({a}, {b})")
                pairs.add((min(a, b), max(a, b)))
        nbrs = [set() for _ in range(L)]
        for a, b in pairs:
            nbrs[a].add(b)
            nbrs[b].add(a)
        sets = _independent_sets(L, [frozenset(n) for n in nbrs], limit)
        return cls(links=links, conflicts=frozenset(pairs), sets=None if sets is None else tuple(sets), d=d)

    @classmethod
    def explicit(cls, links, sets, d=None):
        links = tuple((int(i), int(j)) for i, j in links)
        d = (max(max(l) for l in links) + 1 if links else 0) if d is None else int(d)
        norm = sorted({tuple(sorted(int(x) for x in s)) for s in sets}, key=lambda s: (len(s), s))
        for s in norm:
            if any(not 0 <= x < len(links) for x in s):
                raise ValidationError(f"set {s} references a missing link")
        return cls(links=links, conflicts=None, sets=tuple(norm), d=d)

    @classmethod
    def from_model(cls, P, conflicts=None, limit=ENUMERATION_LIMIT):
        """Every off-diagonal support entry of P becomes a link."""
        P = _model(P)
        links = [(i, j) for i in range(P.d) for j in range(P.d) if i != j and P.p[i, j] > 0]
        return cls.from_conflicts(links, conflicts, d=P.d, limit=limit)

    @property
    def enumerable(self) -> bool:
        return self.sets is not None

    @property
    def owners(self) -> np.ndarray:
        return np.array([i for i, _ in self.links], dtype=np.int64)

    @property
    def heads(self) -> np.ndarray:
        return np.array([j for _, j in self.links], dtype=np.int64)

    def index(self, s) -> int:
        return self._index[tuple(sorted(s))]

    def is_feasible(self, s) -> bool:
        s = tuple(sorted(set(s)))
        if self.sets is not None:
            return s in self._index
        return all((a, b) not in self.conflicts for x, a in enumerate(s) for b in s[x + 1:])

    def node_counts(self, s) -> np.ndarray:
        """N_i(s): number of links in s owned by node i."""
        return np.bincount(self.owners[list(s)], minlength=self.d) if s else np.zeros(self.d, dtype=np.int64)


# ------------------------------------------------------------------- rates

def link_probabilities(P, family: ActivationFamily) -> np.ndarray:
    """p(i, j) for each link, renormalized over the links each node owns."""
    P = _model(P)
    own, head = family.owners, family.heads
    p = P.p[own, head].astype(float)
    if np.any(p <= 0):
        raise ValidationError("every link must lie in the support of P")
    tot = np.bincount(own, weights=p, minlength=P.d)
    return p / tot[own]


def _theta(zeta, P, family):
    zeta = np.asarray(zeta, dtype=float)
    if zeta.shape != (len(family.links),):
        raise ValidationError(f"zeta needs one entry per link ({len(family.links)})")
    p = link_probabilities(P, family)
    own = family.owners
    mix = np.bincount(own, weights=p * zeta, minlength=family.d)
    return zeta - mix[own]


def csma_rates(zeta, P, family: ActivationFamily) -> np.ndarray:
    """R_ij = exp(zeta_ij - sum_k p(i,k) zeta_ik); exponents are capped at +-50."""
    theta = _theta(zeta, P, family)
    if np.any(np.abs(theta) > EXPONENT_CAP):
        warnings.warn(f"rate exponent capped at +-{EXPONENT_CAP:g} "
                      f"(max |exponent| {np.max(np.abs(theta)):.3g})", CsmaRateWarning, stacklevel=2)
        theta = np.clip(theta, -EXPONENT_CAP, EXPONENT_CAP)
    return np.exp(theta)


def _incidence(family):
    if not family.enumerable:
        raise ValidationError("family is too large to enumerate")
    M = np.zeros((len(family.sets), len(family.links)))
    for k, s in enumerate(family.sets):
        M[k, list(s)] = 1.0
    return M


def _phi_from_theta(theta, M):
    logw = M @ theta
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def stationary_phi(zeta, P, family: ActivationFamily) -> np.ndarray:
    """Stationary law over ``family.sets`` for multipliers zeta."""
    return _phi_from_theta(_theta(zeta, P, family), _incidence(family))


def stationary_phi_rates(rates, family: ActivationFamily) -> np.ndarray:
    """Stationary law over ``family.sets`` for arbitrary activation rates."""
    r = np.asarray(rates, dtype=float)
    if np.any(r <= 0):
        raise ValidationError("rates must be positive")
    return _phi_from_theta(np.log(r), _incidence(family))


def link_marginals(phi, family: ActivationFamily) -> np.ndarray:
    """Probability that each link is on, under phi."""
    return np.asarray(phi) @ _incidence(family)


# -------------------------------------------------------------- simulation

@dataclass(eq=False)
class CsmaRun:
    """Outcome of a CTMC simulation.

    ``occupation`` holds the time spent in each feasible set (enumerable
    families only), ``link_counts`` the activations of each link and
    ``node_counts`` the activations summed over the links a node owns.
    ``feed`` lists activations in order as ``(node, neighbor)`` pairs.
    """

    time: float
    occupation: np.ndarray | None
    link_counts: np.ndarray
    node_counts: np.ndarray
    feed: np.ndarray
    final_set: tuple
    events: np.ndarray | None = None
    transitions: int = 0

    def occupation_fractions(self) -> np.ndarray:
        return self.occupation / self.time

    def activation(self) -> ActivationProcess:
        """The activations as an external engine feed."""
        return ActivationProcess.external(self.feed)

    def events_csv(self) -> str:
        if self.events is None:
            raise ValidationError("events were not recorded")
        buf = io.StringIO()
        buf.write("time,link,state\n")
        for t, l, on in self.events:
            buf.write(f"{t:.17g},{int(l)},{'on' if on else 'off'}\n")
        return buf.getvalue()


class _Uniforms:
    """Buffered uniforms from a numpy generator, handed out as Python floats."""

    def __init__(self, gen, size=1 << 16):
        self.gen, self.size = gen, size
        self.buf, self.k = [], 0

    def __call__(self):
        if self.k == len(self.buf):
            self.buf, self.k = self.gen.random(self.size).tolist(), 0
        v = self.buf[self.k]
        self.k += 1
        return v


def _transition_table(family, rates):
    index = family._index
    table = []
    for s in family.sets:
        members = set(s)
        cum, dest, link, on = [], [], [], []
        tot = 0.0
        for l in s:  # switch-offs
            tot += 1.0
            cum.append(tot)
            dest.append(index[tuple(x for x in s if x != l)])
            link.append(l)
            on.append(False)
        for l in range(len(family.links)):
            if l in members:
                continue
            t = tuple(sorted(s + (l,)))
            k = index.get(t)
            if k is not None:
                tot += float(rates[l])
                cum.append(tot)
                dest.append(k)
                link.append(l)
                on.append(True)
        table.append((tot, cum, dest, link, on))
    return table


def _simulate_table(family, rates, horizon, unif, state, max_activations, record):
    table = _transition_table(family, rates)
    L = len(family.links)
    owners = family.owners.tolist()
    heads = family.heads.tolist()
    occ = [0.0] * len(family.sets)
    counts = [0] * L
    feed = []
    events = [] if record else None
    s = family.index(state)
    t = 0.0
    hops = 0
    log = math.log
    while True:
        tot, cum, dest, link, on = table[s]
        if tot == 0.0:
            occ[s] += horizon - t
            t = horizon
            break
        hold = -log(1.0 - unif()) / tot
        if t + hold >= horizon:
            occ[s] += horizon - t
            t = horizon
            break
        occ[s] += hold
        t += hold
        k = bisect.bisect_right(cum, unif() * tot)
        if k >= len(cum):
            k = len(cum) - 1
        l = link[k]
        s = dest[k]
        hops += 1
        if on[k]:
            counts[l] += 1
            feed.append((owners[l], heads[l]))
        if record:
            events.append((t, l, on[k]))
        if on[k] and max_activations is not None and len(feed) >= max_activations:
            break
    return t, np.array(occ), np.array(counts, dtype=np.int64), feed, family.sets[s], events, hops


def _simulate_arrays(family, rates, horizon, gen, state, max_activations, record):
    L = len(family.links)
    nbrs = [[] for _ in range(L)]
    for a, b in family.conflicts:
        nbrs[a].append(b)
        nbrs[b].append(a)
    nbrs = [np.array(n, dtype=np.int64) for n in nbrs]
    active = np.zeros(L, dtype=bool)
    blocked = np.zeros(L, dtype=np.int64)
    for l in state:
        if blocked[l]:
            raise ValidationError("initial set is not feasible")
        active[l] = True
        blocked[nbrs[l]] += 1
    rates = np.asarray(rates, dtype=float)
    owners, heads = family.owners, family.heads
    counts = np.zeros(L, dtype=np.int64)
    feed = []
    events = [] if record else None
    t = 0.0
    hops = 0
    while True:
        eff = np.where(active, 1.0, np.where(blocked == 0, rates, 0.0))
        cum = np.cumsum(eff)
        tot = cum[-1] if L else 0.0
        if tot <= 0.0:
            t = horizon
            break
        u = gen.random(2)
        hold = -math.log1p(-u[0]) / tot
        if t + hold >= horizon:
            t = horizon
            break
        t += hold
        l = min(int(np.searchsorted(cum, u[1] * tot, side="right")), L - 1)
        hops += 1
        if active[l]:
            active[l] = False
            blocked[nbrs[l]] -= 1
            turned_on = False
        else:
            if blocked[l]:
                raise GossipError(f"link {l} switched on while blocked; feasibility violated")
            active[l] = True
            blocked[nbrs[l]] += 1
            counts[l] += 1
            feed.append((int(owners[l]), int(heads[l])))
            turned_on = True
        if record:
            events.append((t, l, turned_on))
        if turned_on and max_activations is not None and len(feed) >= max_activations:
            break
    return t, None, counts, feed, tuple(np.flatnonzero(active).tolist()), events, hops


def csma_simulate(family: ActivationFamily, rates, horizon: float, seed: int | None = None, *,
                  rng: np.random.Generator | None = None, state=(), max_activations: int | None = None,
                  record_events: bool = False, method: str = "auto") -> CsmaRun:
    """Event-driven simulation of the CSMA chain for ``horizon`` time units.

    The run stops early once ``max_activations`` links have switched on.
    ``method="table"`` precomputes the transitions of every feasible set and
    needs an enumerable family; ``method="arrays"`` works from the pairwise
    conflict relation and suits large implicit families. Both realize the same
    chain. Pass either ``seed`` or a generator ``rng`` (to continue a stream).
    """
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (len(family.links),):
        raise ValidationError("need one rate per link")
    if np.any(rates <= 0) or not np.all(np.isfinite(rates)):
        raise ValidationError("rates must be positive and finite")
    if horizon <= 0:
        raise ValidationError("horizon must be positive")
    if rng is None:
        if seed is None:
            raise ValidationError("pass a seed or a generator")
        rng = RngStream(seed).substream("csma")
    state = tuple(sorted(state))
    if not family.is_feasible(state):
        raise ValidationError(f"initial set {state} is not feasible")
    if method == "auto":
        method = "table" if family.enumerable else "arrays"
    if method == "table":
        if not family.enumerable:
            raise ValidationError("table method needs an enumerable family")
        out = _simulate_table(family, rates, horizon, _Uniforms(rng), state, max_activations, record_events)
    elif method == "arrays":
        if family.conflicts is None:
            raise ValidationError("array method needs a pairwise conflict relation")
        out = _simulate_arrays(family, rates, horizon, rng, state, max_activations, record_events)
    else:
        raise ValidationError(f"unknown method {method!r}")
    t, occ, counts, feed, final, events, hops = out
    node_counts = np.bincount(family.owners, weights=counts, minlength=family.d).astype(np.int64)
    feed = np.array(feed, dtype=np.int64).reshape(-1, 2)
    ev = None if events is None else np.array([(a, b, float(c)) for a, b, c in events]).reshape(-1, 3)
    return CsmaRun(time=t, occupation=occ, link_counts=counts, node_counts=node_counts, feed=feed,
                   final_set=final, events=ev, transitions=hops)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


# ---------------------------------------------------------------- learning

def lagrange_update(zeta, link_counts, node_counts, alpha: float, P, family: ActivationFamily,
                    clamp_zeta: bool = False) -> np.ndarray:
    """zeta_ij += alpha (p(i,j) #_i - #_ij), optionally projected onto zeta >= 0."""
    p = link_probabilities(P, family)
    own = family.owners
    zeta = np.asarray(zeta, dtype=float)
    lc = np.asarray(link_counts, dtype=float)
    nc = np.asarray(node_counts, dtype=float)
    out = zeta + alpha * (p * nc[own] - lc)
    return np.maximum(out, 0.0) if clamp_zeta else out


@dataclass(eq=False)
class LearningResult:
    zeta: np.ndarray
    history: np.ndarray
    link_counts: np.ndarray
    node_counts: np.ndarray
    time: float
    feed: np.ndarray | None = None
    capped: int = 0

    def conditional_frequencies(self, family: ActivationFamily) -> np.ndarray:
        """#_ij / #_i accumulated over all blocks."""
        nc = self.node_counts[family.owners].astype(float)
        return np.divide(self.link_counts, nc, out=np.full(len(nc), np.nan), where=nc > 0)


def learn_multipliers(family: ActivationFamily, P, blocks: int, seed: int, *, gain: float = 10.0,
                      warmup: float = 10.0, zeta0=None, clamp_zeta: bool = False, normalize: bool = True,
                      collect_feed: bool = False, max_activations: int | None = None,
                      method: str = "auto") -> LearningResult:
    """Stochastic-gradient learning of the multipliers.

    Block l lasts ``T_l = l`` time units and uses the multipliers left by block
    l - 1; the chain state carries over between blocks. After the block,
    :func:`lagrange_update` is applied with ``alpha(l) = gain / (l + warmup)``
    to the block counts, divided by ``T_l`` when ``normalize`` is set (raw counts grow
    with the block length, which would make the effective step grow too).

    ``collect_feed`` keeps every activation as an engine feed; learning stops
    early once ``max_activations`` have been collected.
    """
    if blocks < 1:
        raise ValidationError("need at least one block")
    if gain <= 0 or warmup < 0:
        raise ValidationError("gain must be positive and warmup nonnegative")
    L = len(family.links)
    zeta = np.zeros(L) if zeta0 is None else np.array(zeta0, dtype=float)
    rng = RngStream(seed).substream("csma")
    state = ()
    hist = [zeta.copy()]
    tot_l = np.zeros(L, dtype=np.int64)
    tot_n = np.zeros(family.d, dtype=np.int64)
    feeds = []
    n_feed = 0
    t = 0.0
    capped = 0
    for l in range(1, blocks + 1):
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always", CsmaRateWarning)
            rates = csma_rates(zeta, P, family)
        capped += len(w)
        left = None if max_activations is None else max_activations - n_feed
        r = csma_simulate(family, rates, float(l), rng=rng, state=state, method=method, max_activations=left)
        state = r.final_set
        t += r.time
        tot_l += r.link_counts
        tot_n += r.node_counts
        if collect_feed:
            feeds.append(r.feed)
        n_feed += len(r.feed)
        scale = 1.0 / r.time if normalize else 1.0
        zeta = lagrange_update(zeta, r.link_counts * scale, r.node_counts * scale, gain / (l + warmup), P, family,
                               clamp_zeta=clamp_zeta)
        hist.append(zeta.copy())
        if max_activations is not None and n_feed >= max_activations:
            break
    feed = np.concatenate(feeds) if collect_feed and feeds else None
    return LearningResult(zeta=zeta, history=np.array(hist), link_counts=tot_l, node_counts=tot_n,
                          time=t, feed=feed, capped=capped)


# ----------------------------------------------------------------- oracle

@dataclass(frozen=True, eq=False)
class EntropySolution:
    phi: np.ndarray
    zeta: np.ndarray
    residual: float
    iterations: int


def constraint_residual(phi, P, family: ActivationFamily) -> np.ndarray:
    """f_ij - p(i,j) f_i for each link, with f the link marginals under phi."""
    f = link_marginals(phi, family)
    p = link_probabilities(P, family)
    own = family.owners
    fi = np.bincount(own, weights=f, minlength=family.d)
    return f - p * fi[own]


def solve_entropy_program(family: ActivationFamily, P, tol: float = 1e-8, max_iter: int = 500) -> EntropySolution:
    """Maximum-entropy law on the feasible sets whose link frequencies obey
    ``f_ij = p(i,j) f_i``.

    The optimum has the form ``stationary_phi(zeta*)``; zeta* minimizes the
    convex function ``log Z(zeta)`` whose gradient is the constraint residual
    and whose Hessian is the covariance of the constraint features. Damped
    Newton steps (least-squares solves, since the Hessian is singular along
    per-node constant shifts of zeta) are taken until the residual is below
    ``tol``.
    """
    M = _incidence(family)
    p = link_probabilities(P, family)
    own = family.owners
    L = len(family.links)
    # feature g_l(s) = 1{l in s} - p_l N_owner(l)(s); log phi(s) = zeta @ g(s) - log Z
    N = np.stack([M[:, own == i].sum(axis=1) for i in range(family.d)], axis=1)
    G = M - N[:, own] * p

    def logz(z):
        e = G @ z
        m = e.max()
        return m + math.log(np.exp(e - m).sum())

    zeta = np.zeros(L)
    res = np.inf
    for it in range(1, max_iter + 1):
        phi = _phi_from_theta(zeta, G)  # G @ zeta is the log weight
        grad = phi @ G
        res = float(np.max(np.abs(grad))) if L else 0.0
        if res < tol:
            return EntropySolution(phi=phi, zeta=zeta, residual=res, iterations=it)
        Gc = G - grad
        H = (Gc * phi[:, None]).T @ Gc
        step = np.linalg.lstsq(H, -grad, rcond=None)[0]
        f0 = logz(zeta)
        slope = grad @ step
        t = 1.0
        while logz(zeta + t * step) > f0 + 1e-4 * t * slope and t > 1e-12:
            t *= 0.5
        zeta = zeta + t * step
    raise InfeasibleProgram(f"no interior solution found; constraint residual {res:.3g}", res)


# ----------------------------------------------------------- coupled run

@dataclass(eq=False)
class CoupledRun:
    trace: object
    learning: LearningResult
    family: ActivationFamily


def csma_rvi_run(P, x0, horizon: int, seed: int, *, family: ActivationFamily | None = None,
                 schedule: StepSchedule = StepSchedule.polynomial(1.0, 0.75), noise: NoiseModel = NoiseModel.none(),
                 gain: float = 10.0, warmup: float = 10.0, zeta0=None, i0: int = 0, estimate: str = "averaged",
                 record_every: int = 100, local_clock: bool = True, max_blocks: int = 100_000,
                 method: str = "auto") -> CoupledRun:
    """Relative value iteration driven by CSMA link activations.

    Multiplier learning runs alongside: every activation collected while the
    blocks proceed triggers one pull update, until ``horizon`` updates have
    been made.
    """
    P = _model(P)
    fam = ActivationFamily.from_model(P) if family is None else family
    learn = learn_multipliers(fam, P, max_blocks, seed, gain=gain, warmup=warmup, zeta0=zeta0, collect_feed=True,
                              max_activations=horizon, method=method)
    if learn.feed is None or len(learn.feed) < horizon:
        raise ValidationError(f"only {0 if learn.feed is None else len(learn.feed)} activations "
                              f"in {max_blocks} blocks; horizon is {horizon}")
    rule = RviGossip(P, x0, i0=i0, estimate=estimate)
    trace = run(rule, x0, schedule, ActivationProcess.external(learn.feed[:horizon]), noise, horizon, seed,
                record_every=record_every, local_clock=local_clock)
    trace.metadata["csma"] = {"links": len(fam.links), "blocks": len(learn.history) - 1,
                              "time": learn.time, "capped": learn.capped}
    return CoupledRun(trace=trace, learning=learn, family=fam)
