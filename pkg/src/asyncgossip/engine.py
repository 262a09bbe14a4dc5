"""Shared simulation core.

A run advances a global integer clock. At tick ``n`` the engine decides which
components update (the activation indicators), draws each node's sampled
neighbor(s) and any measurement noise, and hands these to a step rule that
mutates the state in place. "Asynchronous" operation is therefore modelled as
a random subset of nodes acting at each tick.

Several independent replicas (one per seed) can be advanced together: every
state array carries a leading replica axis. Each replica owns its own random
substreams, so its trajectory depends only on ``(config, seed)``.
"""
from __future__ import annotations

import io
import math
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericAbort, ValidationError

CHUNK = 1024


# ------------------------------------------------------------ step schedules

@dataclass(frozen=True)
class StepSchedule:
    """Stepsize sequence ``a(n)``, ``n = 0, 1, ...``.

    ``constant``: a(n) = a with 0 < a < 1.
    ``harmonic``: a(n) = c / (n + 1).
    ``harmonic_blocked``: a(n) = c / ceil((n + 1) / m), i.e. held constant over
    blocks of ``m`` ticks. Asymptotically this behaves like ``c*m / n``, which is
    how a large effective gain is obtained without a(n) ever exceeding c.
    ``polynomial``: a(n) = c / (n + 1)^g with 1/2 < g <= 1. Paired with a
    running average of the iterates this gives the minimal asymptotic variance.
    """

    kind: str
    value: float
    block: int = 1
    power: float = 1.0

    def __post_init__(self):
        if self.kind == "constant":
            if not 0.0 < self.value < 1.0:
                raise ValidationError(f"constant stepsize must lie in (0, 1), got {self.value}")
        elif self.kind in ("harmonic", "harmonic_blocked", "polynomial"):
            if not 0.0 < self.value <= 1.0:
                raise ValidationError(f"gain c must lie in (0, 1], got {self.value}")
            if self.block < 1:
                raise ValidationError("block length must be >= 1")
            if self.kind == "polynomial" and not 0.5 < self.power <= 1.0:
                raise ValidationError(f"polynomial exponent must lie in (1/2, 1], got {self.power}")
        else:
            raise ValidationError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, a):
        return cls("constant", float(a))

    @classmethod
    def harmonic(cls, c=1.0):
        return cls("harmonic", float(c))

    @classmethod
    def harmonic_blocked(cls, c, m):
        return cls("harmonic_blocked", float(c), int(m))

    @classmethod
    def polynomial(cls, c, g):
        return cls("polynomial", float(c), 1, float(g))

    @property
    def decreasing(self) -> bool:
        return self.kind != "constant"

    def __call__(self, n):
        if np.isscalar(n):
            if self.kind == "constant":
                return self.value
            if self.kind == "harmonic":
                return self.value / (n + 1.0)
            if self.kind == "polynomial":
                return self.value / (n + 1.0) ** self.power
            return self.value / float((n + self.block) // self.block)
        n = np.asarray(n)
        if self.kind == "constant":
            return np.full(n.shape, self.value)
        if self.kind == "harmonic":
            return self.value / (n + 1.0)
        if self.kind == "polynomial":
            return self.value / (n + 1.0) ** self.power
        return self.value / ((n + self.block) // self.block)  # c / ceil((n+1)/m)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "value": self.value}
        if self.kind == "harmonic_blocked":
            out["block"] = self.block
        if self.kind == "polynomial":
            out["power"] = self.power
        return out

    @classmethod
    def from_dict(cls, d: dict):
        return cls(d["kind"], float(d["value"]), int(d.get("block", 1)), float(d.get("power", 1.0)))


# --------------------------------------------------------------- activation

@dataclass(frozen=True, eq=False)
class ActivationProcess:
    """Which components update at each tick.

    ``synchronous``: everybody, every tick.
    ``bernoulli``: node i acts independently with probability ``rates[i]``.
    ``periodic_random``: geometric inter-update times with mean ``means[i]``;
    this is the same law as ``bernoulli`` with rate ``1/means[i]``.
    ``single``: exactly one node acts per tick, chosen with probability
    proportional to ``rates``.
    ``external``: a precomputed feed of ``(node, neighbor)`` pairs, one event
    per tick; the neighbor overrides the rule's primary sample. Used to drive
    a run from CSMA link activations.
    """

    kind: str
    rates: tuple | None = None
    means: tuple | None = None
    feed: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "synchronous":
            return
        if self.kind in ("bernoulli", "single"):
            r = np.asarray(self.rates, dtype=float)
            if r.ndim != 1 or r.size == 0 or np.any(r <= 0):
                raise ValidationError("activation rates must be a non-empty positive vector")
            if self.kind == "bernoulli" and np.any(r > 1):
                raise ValidationError("bernoulli rates must lie in (0, 1]")
        elif self.kind == "periodic_random":
            m = np.asarray(self.means, dtype=float)
            if m.ndim != 1 or m.size == 0 or np.any(m < 1):
                raise ValidationError("mean inter-update times must be >= 1")
        elif self.kind == "external":
            f = np.asarray(self.feed)
            if f.ndim != 2 or f.shape[1] != 2:
                raise ValidationError("external feed must be an (events, 2) array of (node, neighbor)")
            object.__setattr__(self, "feed", f.astype(np.int64))
        else:
            raise ValidationError(f"unknown activation kind {self.kind!r}")

    @classmethod
    def synchronous(cls):
        return cls("synchronous")

    @classmethod
    def bernoulli(cls, rates):
        return cls("bernoulli", rates=tuple(float(r) for r in rates))

    @classmethod
    def periodic_random(cls, means):
        return cls("periodic_random", means=tuple(float(m) for m in means))

    @classmethod
    def single(cls, weights):
        return cls("single", rates=tuple(float(w) for w in weights))

    @classmethod
    def external(cls, feed):
        return cls("external", feed=np.asarray(feed))

    def update_probabilities(self, d: int) -> np.ndarray:
        """Per-tick probability that each node acts."""
        if self.kind == "synchronous":
            return np.ones(d)
        if self.kind == "bernoulli":
            return np.asarray(self.rates, dtype=float)
        if self.kind == "periodic_random":
            return 1.0 / np.asarray(self.means, dtype=float)
        if self.kind == "single":
            w = np.asarray(self.rates, dtype=float)
            return w / w.sum()
        counts = np.bincount(self.feed[:, 0], minlength=d)
        return counts / max(1, len(self.feed))

    def dimension(self):
        if self.kind in ("bernoulli", "single"):
            return len(self.rates)
        if self.kind == "periodic_random":
            return len(self.means)
        return None

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.rates is not None:
            out["rates"] = list(self.rates)
        if self.means is not None:
            out["means"] = list(self.means)
        if self.feed is not None:
            out["events"] = int(len(self.feed))
        return out


@dataclass(frozen=True)
class NoiseModel:
    """Additive i.i.d. zero-mean Gaussian noise on pulled values."""

    variance: float = 0.0

    def __post_init__(self):
        if self.variance < 0:
            raise ValidationError("noise variance must be >= 0")

    @classmethod
    def none(cls):
        return cls(0.0)

    @classmethod
    def awgn(cls, variance):
        return cls(float(variance))

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)

    def to_dict(self) -> dict:
        return {"kind": "awgn" if self.variance > 0 else "none", "variance": self.variance}


class RngStream:
    """Master seed with named, independent substreams.

    A substream is keyed by a stable hash of its name, so adding a new purpose
    never perturbs the draws of existing ones.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def substream(self, name: str) -> np.random.Generator:
        key = zlib.crc32(name.encode("utf8"))
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(key,))))


# -------------------------------------------------------------- step rules

@dataclass
class Tick:
    """Everything a step rule sees at one tick. Arrays have shape (R, d)."""

    n: int
    active: np.ndarray
    all_active: bool
    a: float | np.ndarray
    draws: dict
    uniforms: dict
    noise: np.ndarray | None
    offset: np.ndarray | None = None

    def gather(self, values: np.ndarray, name: str = "xi") -> np.ndarray:
        """``values[r, draws[name][r, i]]`` for every replica r and node i."""
        idx = self.draws[name]
        if self.offset is None:
            return np.take_along_axis(values, idx, axis=1)
        return values.take(idx + self.offset)


class StepRule:
    """Base class for update rules driven by :func:`run_many`.

    Subclasses set ``samplers`` (name -> row-stochastic matrix; one index per
    node per tick is drawn from each), optionally ``uniforms`` (names of extra
    per-node U(0, 1) draws), and ``target`` (the vector the tracked state is
    measured against). The first sampler is the primary one, which an external
    activation feed overrides.
    """

    name = "rule"
    primary = "x"
    samplers: dict = {}
    uniforms: tuple = ()
    noisy = True
    target: np.ndarray

    @property
    def d(self) -> int:
        return len(self.target)

    def init_state(self, x0: np.ndarray, replicas: int) -> dict:
        return {"x": np.tile(np.asarray(x0, dtype=float), (replicas, 1))}

    def step(self, state: dict, tick: Tick) -> None:
        raise NotImplementedError

    def tracked(self, state: dict) -> np.ndarray:
        return state[self.primary]

    def consensus(self, state: dict) -> np.ndarray:
        return self.tracked(state).mean(axis=1)

    def extras(self, state: dict) -> dict:
        return {}

    def describe(self) -> dict:
        return {"rule": self.name}


def sample_rows(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling: column i of ``u`` is mapped through row i of ``cdf``."""
    out = np.empty(u.shape, dtype=np.int64)
    d = cdf.shape[0]
    for i in range(d):
        out[..., i] = np.searchsorted(cdf[i], u[..., i], side="right")
    np.minimum(out, d - 1, out=out)
    return out


class AliasSampler:
    """Walker alias tables, one per row of a row-stochastic matrix.

    A single uniform per draw is split into a column index (integer part of
    ``u * d``) and an acceptance test (fractional part), so a whole chunk of
    draws for all rows is a couple of vectorized gathers.
    """

    def __init__(self, P):
        P = np.asarray(P, dtype=float)
        d = P.shape[1]
        self.d = d
        self.accept = np.ones(P.shape)
        self.alias = np.tile(np.arange(d), (P.shape[0], 1))
        for i, row in enumerate(P):
            scaled = row * d / row.sum()
            small = [j for j in range(d) if scaled[j] < 1.0]
            large = [j for j in range(d) if scaled[j] >= 1.0]
            while small and large:
                s, g = small.pop(), large.pop()
                self.accept[i, s] = scaled[s]
                self.alias[i, s] = g
                scaled[g] -= 1.0 - scaled[s]
                (small if scaled[g] < 1.0 else large).append(g)
            # leftovers are 1 up to round-off
            for j in small + large:
                self.accept[i, j] = 1.0
        self._offset = np.arange(P.shape[0]) * d
        self._accept = self.accept.ravel()
        self._alias = self.alias.ravel()

    def draw(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms of shape (..., rows) to one column index per row."""
        v = u * self.d
        k = np.minimum(v.astype(np.int64), self.d - 1)
        frac = v - k
        flat = k + self._offset
        return np.where(frac < self._accept.take(flat), k, self._alias.take(flat))

    def draw_rows(self, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
        """One draw from row ``rows[...]`` for each uniform in ``u``."""
        v = u * self.d
        k = np.minimum(v.astype(np.int64), self.d - 1)
        frac = v - k
        flat = k + np.asarray(rows) * self.d
        return np.where(frac < self._accept.take(flat), k, self._alias.take(flat))


def span_seminorm(x) -> float | np.ndarray:
    """max_i x_i - min_i x_i, taken along the last axis."""
    x = np.asarray(x, dtype=float)
    if x.size == 0 or x.shape[-1] == 0:
        raise ValidationError("span seminorm of an empty vector")
    return x.max(axis=-1) - x.min(axis=-1)


def running_average_update(z, x_next, n: int):
    """One step of the running mean ``z + (x_next - z) / (n + 1)``."""
    if n < 0:
        raise ValidationError("tick index must be >= 0")
    z = np.asarray(z, dtype=float)
    return z + (np.asarray(x_next, dtype=float) - z) / (n + 1.0)


# ------------------------------------------------------------------ traces

@dataclass(eq=False)
class RunTrace:
    n: np.ndarray
    sup_err: np.ndarray
    span_err: np.ndarray
    consensus: np.ndarray
    extras: dict
    final: dict
    metadata: dict = field(default_factory=dict)

    @property
    def columns(self) -> list[str]:
        return ["n", "supErr", "spanErr", "consensus", *self.extras]

    def rows(self):
        ex = list(self.extras.values())
        for k in range(len(self.n)):
            yield (int(self.n[k]), self.sup_err[k], self.span_err[k], self.consensus[k],
                   *(e[k] for e in ex))

    def csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        for row in self.rows():
            buf.write(str(row[0]))
            for v in row[1:]:
                buf.write(f",{v:.17g}")
            buf.write("\n")
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.csv_text())

    def first_below(self, threshold: float, metric: str = "supErr"):
        """Tick of the first record with ``metric < threshold``, else None."""
        series = {"supErr": self.sup_err, "spanErr": self.span_err}.get(metric)
        if series is None:
            series = self.extras[metric]
        hit = np.nonzero(series < threshold)[0]
        return int(self.n[hit[0]]) if hit.size else None


def _chunk_uniform(gens, c, d):
    return np.stack([g.random((c, d)) for g in gens], axis=1)


def run_many(rule: StepRule, x0, schedule: StepSchedule, activation: ActivationProcess,
             noise: NoiseModel, horizon: int, seeds, record_every: int = 1,
             local_clock: bool = False,
             observer: Callable[[int, dict], None] | None = None) -> list[RunTrace]:
    """Advance one replica per seed for ``horizon`` ticks and record metrics.

    With ``local_clock`` the stepsize of node i is ``a(nu_i)`` where ``nu_i`` is
    the number of updates node i has made so far; otherwise every node uses
    the global ``a(n)``. ``observer(n, state)`` is called after every tick.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValidationError("need at least one seed")
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    if record_every < 1:
        raise ValidationError("record_every must be >= 1")
    d = rule.d
    x0 = np.asarray(x0, dtype=float)
    if x0.shape[-1] != d:
        raise ValidationError(f"x0 has dimension {x0.shape[-1]}, rule expects {d}")
    act_dim = activation.dimension()
    if act_dim is not None and act_dim != d:
        raise ValidationError(f"activation is sized for {act_dim} nodes, rule has {d}")
    if activation.kind == "external":
        if len(activation.feed) < horizon:
            raise ValidationError(f"external feed has {len(activation.feed)} events, horizon is {horizon}")
        if activation.feed.min() < 0 or activation.feed.max() >= d:
            raise ValidationError("external feed references a node outside the rule's range")

    R = len(seeds)
    streams = [RngStream(s) for s in seeds]
    sampler_names = list(rule.samplers)
    tables = {name: AliasSampler(m) for name, m in rule.samplers.items()}
    gen_samp = {name: [s.substream(f"sample:{name}") for s in streams] for name in sampler_names}
    gen_unif = {name: [s.substream(f"uniform:{name}") for s in streams] for name in rule.uniforms}
    gen_act = [s.substream("activation") for s in streams]
    use_noise = rule.noisy and noise.variance > 0
    gen_noise = [s.substream("noise") for s in streams] if use_noise else None
    probs = activation.update_probabilities(d)
    sigma = noise.sigma

    state = rule.init_state(x0, R)
    primary = rule.primary
    nu = np.zeros((R, d), dtype=np.int64) if local_clock else None

    rec_n, rec_sup, rec_span, rec_cons, rec_ex = [], [], [], [], []
    target = np.asarray(rule.target, dtype=float)

    def record(n):
        err = rule.tracked(state) - target
        rec_n.append(n)
        rec_sup.append(np.max(np.abs(err), axis=-1))
        rec_span.append(err.max(axis=-1) - err.min(axis=-1))
        rec_cons.append(np.array(rule.consensus(state), dtype=float, copy=True))
        rec_ex.append({k: np.array(v, dtype=float, copy=True) for k, v in rule.extras(state).items()})

    record(0)
    all_true = np.ones((R, d), dtype=bool)
    offset = (np.arange(R) * d)[:, None]
    n = 0
    while n < horizon:
        c = min(CHUNK, horizon - n)
        draws_c = {name: tables[name].draw(_chunk_uniform(gen_samp[name], c, d))
                   for name in sampler_names}
        unif_c = {name: _chunk_uniform(gen_unif[name], c, d) for name in rule.uniforms}
        if activation.kind in ("bernoulli", "periodic_random"):
            act_c = _chunk_uniform(gen_act, c, d) < probs
        elif activation.kind == "single":
            picks = np.stack([g.choice(d, size=c, p=probs) for g in gen_act], axis=1)
            act_c = np.zeros((c, R, d), dtype=bool)
            np.put_along_axis(act_c, picks[..., None], True, axis=2)
        elif activation.kind == "external":
            ev = activation.feed[n:n + c]
            act_c = np.zeros((c, R, d), dtype=bool)
            act_c[np.arange(c), :, ev[:, 0]] = True
            if sampler_names:
                draws_c[sampler_names[0]][np.arange(c), :, ev[:, 0]] = ev[:, 1][:, None]
        else:
            act_c = None
        noise_c = (np.stack([g.standard_normal((c, d)) for g in gen_noise], axis=1) * sigma
                   if use_noise else None)

        for k in range(c):
            if act_c is None:
                active, all_active = all_true, True
            else:
                active, all_active = act_c[k], False
            if local_clock:
                a = schedule(nu)
            else:
                a = schedule(n)
            tick = Tick(n=n, active=active, all_active=all_active, a=a,
                        draws={name: v[k] for name, v in draws_c.items()},
                        uniforms={name: v[k] for name, v in unif_c.items()},
                        noise=None if noise_c is None else noise_c[k], offset=offset)
            rule.step(state, tick)
            if local_clock:
                nu += active
            x = state[primary]
            if not np.isfinite(x).all():
                r, i = np.argwhere(~np.isfinite(x))[0]
                raise NumericAbort(f"non-finite state at tick {n + 1}, node {i}, seed {seeds[r]}",
                                   tick=n + 1, node=int(i), seed=seeds[r])
            n += 1
            if observer is not None:
                observer(n, state)
            if n % record_every == 0 or n == horizon:
                record(n)

    meta_base = {
        "rule": rule.describe(),
        "schedule": schedule.to_dict(),
        "activation": activation.to_dict(),
        "noise": noise.to_dict(),
        "horizon": horizon,
        "record_every": record_every,
        "local_clock": local_clock,
    }
    n_arr = np.asarray(rec_n, dtype=np.int64)
    sup = np.asarray(rec_sup)
    span = np.asarray(rec_span)
    cons = np.asarray(rec_cons)
    ex_names = list(rec_ex[0]) if rec_ex else []
    traces = []
    for r, seed in enumerate(seeds):
        traces.append(RunTrace(
            n=n_arr,
            sup_err=sup[:, r].copy(),
            span_err=span[:, r].copy(),
            consensus=cons[:, r].copy(),
            extras={k: np.asarray([e[k][r] for e in rec_ex]) for k in ex_names},
            final={k: v[r].copy() for k, v in state.items() if np.ndim(v) == 2},
            metadata={**meta_base, "seed": seed},
        ))
    return traces


def run(rule, x0, schedule, activation, noise, horizon, seed, record_every=1, **kw) -> RunTrace:
    """Single-seed convenience wrapper around :func:`run_many`."""
    return run_many(rule, x0, schedule, activation, noise, horizon, [seed], record_every, **kw)[0]


# ------------------------------------------------------------- aggregation

@dataclass(eq=False)
class AggregateSummary:
    n: np.ndarray
    mean: dict
    std: dict
    final_consensus: np.ndarray
    histogram: tuple

    def csv_text(self) -> str:
        names = list(self.mean)
        buf = io.StringIO()
        buf.write(",".join(["n"] + [f"{m}_mean" for m in names] + [f"{m}_std" for m in names]) + "\n")
        for k in range(len(self.n)):
            buf.write(str(int(self.n[k])))
            for m in names:
                buf.write(f",{self.mean[m][k]:.17g}")
            for m in names:
                buf.write(f",{self.std[m][k]:.17g}")
            buf.write("\n")
        return buf.getvalue()


def _config_key(meta: dict) -> dict:
    return {k: v for k, v in meta.items() if k != "seed"}


def multi_seed_aggregate(traces, bins: int = 20) -> AggregateSummary:
    """Per-record mean and (population) standard deviation across seeds."""
    traces = list(traces)
    if not traces:
        raise ValidationError("need at least one trace")
    ref = traces[0]
    for t in traces[1:]:
        if _config_key(t.metadata) != _config_key(ref.metadata) or not np.array_equal(t.n, ref.n):
            raise ValidationError("traces differ in configuration beyond the seed")
    series = {"supErr": [t.sup_err for t in traces], "spanErr": [t.span_err for t in traces],
              "consensus": [t.consensus for t in traces]}
    for name in ref.extras:
        series[name] = [t.extras[name] for t in traces]
    mean = {k: np.mean(v, axis=0) for k, v in series.items()}
    std = {k: np.std(v, axis=0) for k, v in series.items()}
    finals = np.array([t.consensus[-1] for t in traces])
    hist = np.histogram(finals, bins=bins)
    return AggregateSummary(n=ref.n.copy(), mean=mean, std=std, final_consensus=finals, histogram=hist)
