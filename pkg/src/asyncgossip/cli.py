"""Experiment runner.

An experiment file is one JSON object. Top-level fields:

``name``          experiment name (string)
``algorithm``     ``{"id": <id>, "params": {...}}``; ids and their parameters
                  are listed in ``ALGORITHMS``
``network``       ``{"kind": "inline", "matrix": [[...]], "normalize": false}``,
                  ``{"kind": "edge_list", "path": "...", "d": null, "normalize": true}``,
                  ``{"kind": "erdos_renyi", "d": 100, "p_edge": 0.2, "seed": 2024}`` or
                  ``{"kind": "random_nonnegative", "d": 10, "density": 0.5, "seed": 0}``
                  (omitted for the streaming PCA algorithms)
``x0``            ``{"kind": "inline", "values": [...]}``,
                  ``{"kind": "uniform", "low": 0, "high": 1, "seed": 0}`` or
                  ``{"kind": "constant", "value": 1.0}``
``schedule``      ``{"kind": "polynomial", "value": 1.0, "power": 0.75}`` and the other
                  stepsize kinds (``constant``, ``harmonic``, ``harmonic_blocked`` with ``block``)
``activation``    ``{"kind": "synchronous"}``, ``{"kind": "bernoulli", "rates": [...]}``,
                  ``{"kind": "periodic_random", "means": [...]}`` or ``{"offset": c}`` for
                  means ``c + j``, j = 1..d, or ``{"kind": "single", "weights": [...]}``
``noise``         ``{"variance": 0.25}``
``horizon``       ticks (samples for PCA)
``record_every``  ticks between trace rows
``seeds``         list of ints or ``{"count": N, "start": 0}``
``local_clock``   per-node update counters drive the stepsize
``output``        output directory

A file may also carry ``"variants": [{"label": ..., <overrides>}, ...]``;
each variant is the base object deep-merged with its overrides and is
written to its own subdirectory.

Each experiment writes ``trace_seed<s>.csv`` per seed, ``aggregate.csv`` and
``metadata.json`` (the normalized config plus oracle reference values).
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .csma import csma_rvi_run
from .engine import ActivationProcess, NoiseModel, StepSchedule, multi_seed_aggregate, run_many
from .errors import GossipError, NumericAbort, ValidationError
from .netgraph import (
    StochasticMatrixModel,
    erdos_renyi_model,
    perron_eigenpair,
    read_edge_list,
    second_eigenvalue_modulus,
    solve_poisson,
    stationary_distribution,
)
from .avg_gossip import TWO_NODE_P, TWO_NODE_RATES, TWO_NODE_X0, VanillaGossip
from .rvi_gossip import RviGossip
from .spectral import (
    HitsGossip,
    PageRankGossip,
    PcaStream,
    PfGossip,
    PushGossip,
    ReputationGossip,
    random_nonnegative_matrix,
    run_pca_block,
    run_pca_sa,
)
from .variants import ImportanceGossip, MultihopGossip, importance_cost, optimal_importance_matrix

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3

REQUIRED = "<required>"

# parameter defaults per algorithm id; unknown parameters are rejected
ALGORITHMS = {
    "vanilla": {"sampled": True},
    "rvi": {"i0": 0, "mode": "anchor", "fast_ratio": 10.0, "estimate": "averaged"},
    "multihop": {"alpha": 0.8, "staleness": "stored", "base": "rvi", "i0": 0, "estimate": "iterate"},
    "importance": {"polling": "optimal"},
    "csma_rvi": {"gain": 10.0, "warmup": 10.0, "i0": 0, "estimate": "averaged", "method": "auto"},
    "pf": {"alpha": None, "form": "standard", "xbar": "exact"},
    "pagerank": {"eps": 0.15},
    "hits": {"hubs": False},
    "push": {},
    "reputation": {"ratings": None, "ratings_seed": 0, "activity": None, "spread": 3, "estimate": "averaged"},
    "pca_sa": {"d": 20, "sigma": 1.0},
    "pca_block": {"d": 20, "sigma": 1.0, "block": 4000},
}
STREAMING = ("pca_sa", "pca_block")
NETWORK_FIELDS = {
    "inline": {"matrix": REQUIRED, "normalize": False},
    "edge_list": {"path": REQUIRED, "d": None, "normalize": True},
    "erdos_renyi": {"d": REQUIRED, "p_edge": REQUIRED, "seed": 0},
    "random_nonnegative": {"d": REQUIRED, "density": REQUIRED, "seed": 0},
}
X0_FIELDS = {
    "inline": {"values": REQUIRED},
    "uniform": {"low": 0.0, "high": 1.0, "seed": 0},
    "constant": {"value": 1.0},
}
ACTIVATION_FIELDS = {
    "synchronous": {},
    "bernoulli": {"rates": REQUIRED},
    "periodic_random": {"means": None, "offset": None},
    "single": {"weights": REQUIRED},
}
SCHEDULE_FIELDS = {"kind": None, "value": 1.0, "block": 1, "power": 1.0}
TOP_FIELDS = ("name", "label", "algorithm", "network", "x0", "schedule", "activation", "noise", "horizon",
              "record_every", "seeds", "local_clock", "output", "variants")


class ConfigError(ValidationError):
    """Invalid experiment config; ``problems`` lists ``field: message`` lines."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# ---------------------------------------------------------------- parsing

def _fill(section: str, obj, fields: dict, problems: list) -> dict:
    if not isinstance(obj, dict):
        problems.append(f"{section}: expected an object")
        return {}
    out = {}
    for k in obj:
        if k not in fields and k != "kind":
            problems.append(f"{section}.{k}: unknown field")
    for k, default in fields.items():
        v = obj.get(k, default)
        out[k] = copy.deepcopy(v)
    return out


def _kind_section(section: str, obj, table: dict, problems: list, default_kind=None) -> dict:
    if obj is None and default_kind is not None:
        obj = {"kind": default_kind}
    if not isinstance(obj, dict):
        problems.append(f"{section}: expected an object")
        return {}
    kind = obj.get("kind", default_kind)
    if kind not in table:
        problems.append(f"{section}.kind: expected one of {sorted(table)}, got {kind!r}")
        return {}
    out = {"kind": kind, **_fill(section, obj, table[kind], problems)}
    for k, v in out.items():
        if v is REQUIRED:
            problems.append(f"{section}.{k}: required")
    return out


def _as_int(section, v, problems, minimum=None):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v) or float(v) != int(v):
        problems.append(f"{section}: expected an integer, got {v!r}")
        return None
    v = int(v)
    if minimum is not None and v < minimum:
        problems.append(f"{section}: must be >= {minimum}")
        return None
    return v


def _seeds(obj, problems) -> tuple:
    if isinstance(obj, dict):
        extra = set(obj) - {"count", "start"}
        for k in sorted(extra):
            problems.append(f"seeds.{k}: unknown field")
        count = _as_int("seeds.count", obj.get("count", 1), problems, 1)
        start = _as_int("seeds.start", obj.get("start", 0), problems, 0)
        return tuple(range(start, start + count)) if count is not None and start is not None else ()
    if isinstance(obj, list) and obj:
        vals = [_as_int(f"seeds[{k}]", v, problems, 0) for k, v in enumerate(obj)]
        if len(set(vals)) != len(vals):
            problems.append("seeds: duplicate seeds")
        return tuple(v for v in vals if v is not None)
    problems.append("seeds: expected a non-empty list or {count, start}")
    return ()


@dataclass(frozen=True)
class ExperimentConfig:
    """One fully validated experiment, in normalized plain-data form."""

    name: str
    algorithm: str
    params: dict
    network: dict | None
    x0: dict | None
    schedule: dict
    activation: dict
    noise: float
    horizon: int
    record_every: int
    seeds: tuple
    local_clock: bool
    output: str
    label: str | None = None
    base_dir: str = field(default=".", compare=False)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "label": self.label,
            "algorithm": {"id": self.algorithm, "params": self.params},
            "network": self.network, "x0": self.x0, "schedule": self.schedule,
            "activation": self.activation, "noise": {"variance": self.noise},
            "horizon": self.horizon, "record_every": self.record_every, "seeds": list(self.seeds),
            "local_clock": self.local_clock, "output": self.output,
        }

    @classmethod
    def from_dict(cls, obj, base_dir=".") -> ExperimentConfig:
        """Check every field and build the experiment once, so that every
        problem surfaces before anything runs."""
        problems = []
        if not isinstance(obj, dict):
            raise ConfigError(["config: expected a JSON object"])
        for k in obj:
            if k not in TOP_FIELDS:
                problems.append(f"{k}: unknown field")
        name = obj.get("name")
        if not isinstance(name, str) or not name:
            problems.append("name: required non-empty string")
        alg = obj.get("algorithm")
        alg_id, params = None, {}
        if not isinstance(alg, dict) or alg.get("id") not in ALGORITHMS:
            got = alg.get("id") if isinstance(alg, dict) else alg
            problems.append(f"algorithm.id: expected one of {sorted(ALGORITHMS)}, got {got!r}")
        else:
            alg_id = alg["id"]
            for k in alg:
                if k not in ("id", "params"):
                    problems.append(f"algorithm.{k}: unknown field")
            params = _fill("algorithm.params", alg.get("params", {}), ALGORITHMS[alg_id], problems)
        streaming = alg_id in STREAMING
        network = x0 = None
        if streaming:
            for k in ("network", "x0"):
                if obj.get(k) is not None:
                    problems.append(f"{k}: not used by {alg_id}; omit it")
        else:
            network = _kind_section("network", obj.get("network"), NETWORK_FIELDS, problems)
            x0 = _kind_section("x0", obj.get("x0"), X0_FIELDS, problems)
        schedule = _fill("schedule", obj.get("schedule", {"kind": "harmonic"}), SCHEDULE_FIELDS, problems)
        try:
            StepSchedule.from_dict(schedule)
        except (ValidationError, KeyError, TypeError, ValueError) as exc:
            problems.append(f"schedule: {exc}")
        activation = _kind_section("activation", obj.get("activation"), ACTIVATION_FIELDS, problems,
                                   default_kind="synchronous")
        if alg_id in ("csma_rvi", "reputation", *STREAMING) and activation.get("kind") != "synchronous":
            problems.append(f"activation: {alg_id} chooses its own updates; omit activation")
        noise = obj.get("noise", {"variance": 0.0})
        variance = 0.0
        if not isinstance(noise, dict) or set(noise) - {"variance"}:
            problems.append("noise: expected {\"variance\": v}")
        else:
            variance = noise.get("variance", 0.0)
            if not isinstance(variance, (int, float)) or isinstance(variance, bool) or variance < 0:
                problems.append("noise.variance: must be a number >= 0")
                variance = 0.0
        if streaming and variance:
            problems.append(f"noise: not used by {alg_id}; omit it")
        horizon = _as_int("horizon", obj.get("horizon"), problems, 1)
        record_every = _as_int("record_every", obj.get("record_every", 100), problems, 1)
        seeds = _seeds(obj.get("seeds", [0]), problems)
        local_clock = obj.get("local_clock", False)
        if not isinstance(local_clock, bool):
            problems.append("local_clock: expected true or false")
        output = obj.get("output", f"runs/{name}")
        if not isinstance(output, str):
            problems.append("output: expected a path string")
        label = obj.get("label")
        if label is not None and (not isinstance(label, str) or not label or "/" in label):
            problems.append("label: expected a plain non-empty string")
        if problems:
            raise ConfigError(problems)
        cfg = cls(name=name, algorithm=alg_id, params=params, network=network, x0=x0, schedule=schedule,
                  activation=activation, noise=float(variance), horizon=horizon, record_every=record_every,
                  seeds=seeds, local_clock=local_clock, output=output, label=label, base_dir=str(base_dir))
        build_plan(cfg)
        return cfg


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "network" and k != "x0":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_suite(obj, base_dir=".") -> list[ExperimentConfig]:
    """Experiments described by one config object, expanding ``variants``."""
    if not isinstance(obj, dict):
        raise ConfigError(["config: expected a JSON object"])
    variants = obj.get("variants")
    if variants is None:
        return [ExperimentConfig.from_dict(obj, base_dir)]
    if not isinstance(variants, list) or not variants:
        raise ConfigError(["variants: expected a non-empty list"])
    base = {k: v for k, v in obj.items() if k != "variants"}
    out, problems, labels = [], [], set()
    for k, over in enumerate(variants):
        if not isinstance(over, dict) or "label" not in over:
            problems.append(f"variants[{k}]: expected an object with a label")
            continue
        if over["label"] in labels:
            problems.append(f"variants[{k}].label: duplicate label {over['label']!r}")
        labels.add(over["label"])
        try:
            out.append(ExperimentConfig.from_dict(_merge(base, over), base_dir))
        except ValidationError as exc:
            msgs = exc.problems if isinstance(exc, ConfigError) else [str(exc)]
            problems.extend(f"variants[{k}] ({over['label']}): {m}" for m in msgs)
    if problems:
        raise ConfigError(problems)
    return out


def load_config(path) -> list[ExperimentConfig]:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError([f"config: cannot read {path}: {exc.strerror}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from None
    return parse_suite(obj, path.parent)


# --------------------------------------------------------------- building

@dataclass(eq=False)
class Plan:
    config: ExperimentConfig
    rule: object | None
    matrix: np.ndarray | None
    x0: np.ndarray | None
    schedule: StepSchedule
    activation: ActivationProcess
    noise: NoiseModel
    oracle: dict
    network_meta: dict


def _network(cfg: ExperimentConfig):
    net = cfg.network
    kind = net["kind"]
    meta = {}
    if kind == "inline":
        m = np.asarray(net["matrix"], dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.size == 0:
            raise ConfigError(["network.matrix: expected a non-empty square matrix"])
    elif kind == "edge_list":
        path = Path(net["path"])
        if not path.is_absolute():
            path = Path(cfg.base_dir) / path
        if not path.exists():
            raise ConfigError([f"network.path: {path} does not exist"])
        m = read_edge_list(path, net["d"])
    elif kind == "erdos_renyi":
        graph, model = erdos_renyi_model(int(net["d"]), float(net["p_edge"]), int(net["seed"]))
        m = model.p
        meta = dict(graph.meta)
    else:
        m = random_nonnegative_matrix(int(net["d"]), float(net["density"]), int(net["seed"]))
    if net.get("normalize"):
        m = StochasticMatrixModel.from_weights(m).p
    return m, meta


def _x0(cfg: ExperimentConfig, d: int) -> np.ndarray:
    spec = cfg.x0
    if spec["kind"] == "inline":
        x = np.asarray(spec["values"], dtype=float)
        if x.shape != (d,):
            raise ConfigError([f"x0.values: expected {d} values, got shape {x.shape}"])
        return x
    if spec["kind"] == "uniform":
        return np.random.default_rng(int(spec["seed"])).uniform(float(spec["low"]), float(spec["high"]), d)
    return np.full(d, float(spec["value"]))


def _activation(cfg: ExperimentConfig, d: int | None) -> ActivationProcess:
    spec = cfg.activation
    kind = spec["kind"]
    if kind == "synchronous":
        return ActivationProcess.synchronous()
    if kind == "bernoulli":
        act = ActivationProcess.bernoulli(spec["rates"])
    elif kind == "single":
        act = ActivationProcess.single(spec["weights"])
    else:
        if (spec["means"] is None) == (spec["offset"] is None):
            raise ConfigError(["activation: give exactly one of means and offset"])
        means = spec["means"] if spec["means"] is not None else float(spec["offset"]) + np.arange(1, d + 1)
        act = ActivationProcess.periodic_random(means)
    if act.dimension() != d:
        raise ConfigError([f"activation: has {act.dimension()} nodes, network has {d}"])
    return act


def _ratings(p: dict, P: np.ndarray) -> np.ndarray:
    if p["ratings"] is not None:
        return np.asarray(p["ratings"], dtype=float)
    rng = np.random.default_rng(int(p["ratings_seed"]))
    return np.where(P > 0, rng.integers(1, 11, P.shape), 0).astype(float)


def _stochastic_oracle(P, x0) -> dict:
    eta = stationary_distribution(P)
    return {"eta": eta, "beta": float(eta @ x0), "lambda2": second_eigenvalue_modulus(P)}


def _build_rule(cfg: ExperimentConfig, m, x0):
    p, alg = cfg.params, cfg.algorithm
    if alg == "vanilla":
        return VanillaGossip(m, x0, sampled=bool(p["sampled"])), _stochastic_oracle(m, x0)
    if alg in ("rvi", "csma_rvi"):
        rule = None
        if alg == "rvi":
            rule = RviGossip(m, x0, i0=int(p["i0"]), mode=p["mode"], fast_ratio=float(p["fast_ratio"]),
                             estimate=p["estimate"])
        sol = solve_poisson(m, x0, int(p["i0"]))
        oracle = {**_stochastic_oracle(m, x0), "Vstar": sol.V}
        if rule is not None:
            oracle["target"] = rule.target
        return rule, oracle
    if alg == "multihop":
        rule = MultihopGossip(m, x0, alpha=float(p["alpha"]), staleness=p["staleness"], base=p["base"],
                              i0=int(p["i0"]), estimate=p["estimate"])
        desc = rule.describe()
        return rule, {**_stochastic_oracle(m, x0), "lambda2_effective": desc["lambda2_effective"],
                      "target": rule.target}
    if alg == "importance":
        pol = p["polling"]
        if pol == "optimal":
            Q = optimal_importance_matrix(m).p
        elif pol == "target":
            Q = m
        elif isinstance(pol, list):
            Q = np.asarray(pol, dtype=float)
        else:
            raise ConfigError(["algorithm.params.polling: expected 'optimal', 'target' or a matrix"])
        rule = ImportanceGossip(m, x0, Q=Q)
        return rule, {**_stochastic_oracle(m, x0), "cost": importance_cost(m, Q),
                      "cost_target_polling": importance_cost(m, m)}
    if alg == "pf":
        rule = PfGossip(m, alpha=p["alpha"], form=p["form"], xbar=p["xbar"])
        pair = perron_eigenpair(m, rule.alpha)
        return rule, {"qstar": pair.qstar, "lambda": pair.lam}
    if alg == "pagerank":
        rule = PageRankGossip(m, float(p["eps"]))
        return rule, {"qstar": rule.target, "lambda": 1.0}
    if alg == "hits":
        rule = HitsGossip(m, hubs=bool(p["hubs"]))
        return rule, {"qstar": rule.target, "lambda": rule.pair.lam}
    if alg == "push":
        rule = PushGossip(m)
        return rule, {"qstar": rule.target, "eta": stationary_distribution(m)}
    if alg == "reputation":
        M = _ratings(p, m)
        rule = ReputationGossip(m, M, activity=p["activity"], spread=int(p["spread"]), estimate=p["estimate"])
        nu = np.ones(len(m)) if p["activity"] is None else np.asarray(p["activity"], dtype=float)
        pair = perron_eigenpair((nu / nu.sum())[:, None] * M, rule.alpha)
        return rule, {"qstar": pair.qstar, "lambda": pair.lam, "mean_ratings": M}
    raise ConfigError([f"algorithm.id: {alg} is not an engine algorithm"])


def build_plan(cfg: ExperimentConfig) -> Plan:
    """Materialize network, start vector, rule and oracle values."""
    schedule = StepSchedule.from_dict(cfg.schedule)
    noise = NoiseModel(cfg.noise)
    try:
        if cfg.algorithm in STREAMING:
            p = cfg.params
            d = _as_checked(p["d"], "algorithm.params.d", 2)
            sigma = float(p["sigma"])
            if sigma < 0:
                raise ConfigError(["algorithm.params.sigma: must be >= 0"])
            if cfg.algorithm == "pca_block":
                B = _as_checked(p["block"], "algorithm.params.block", 1)
                if cfg.horizon % B:
                    raise ConfigError([f"horizon: must be a multiple of the block length {B}"])
            elif cfg.horizon < 2:
                raise ConfigError(["horizon: need at least 2 samples"])
            oracle = {"lambda_top": 1.0 + sigma ** 2, "fixed_point_norm": 1.0 + sigma ** 2}
            return Plan(cfg, None, None, None, schedule, ActivationProcess.synchronous(), noise, oracle, {})
        m, meta = _network(cfg)
        x0 = _x0(cfg, len(m))
        act = _activation(cfg, len(m))
        rule, oracle = _build_rule(cfg, m, x0)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError([f"algorithm/network: {exc}"]) from None
    return Plan(cfg, rule, m, x0, schedule, act, noise, oracle, meta)


def _as_checked(v, section, minimum):
    problems = []
    out = _as_int(section, v, problems, minimum)
    if problems:
        raise ConfigError(problems)
    return out


# ---------------------------------------------------------------- running

def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _pca_aggregate(runs) -> str:
    n = runs[0].n
    ang = np.array([r.angle for r in runs])
    nrm = np.array([r.norm for r in runs])
    rows = ["n,angle_mean,norm_mean,angle_std,norm_std"]
    for k in range(len(n)):
        rows.append(f"{int(n[k])},{ang[:, k].mean():.17g},{nrm[:, k].mean():.17g},"
                    f"{ang[:, k].std():.17g},{nrm[:, k].std():.17g}")
    return "\n".join(rows) + "\n"


def _final_row(trace) -> dict:
    return {c: v for c, v in zip(trace.columns, list(trace.rows())[-1])}


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> list[Path]:
    """Run every seed of one experiment and write its outputs."""
    plan = build_plan(cfg)
    out = Path(out_dir if out_dir is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    per_seed = {}
    if cfg.algorithm in STREAMING:
        p = cfg.params
        runs = []
        for s in cfg.seeds:
            stream = PcaStream.planted(int(p["d"]), float(p["sigma"]), s)
            if cfg.algorithm == "pca_sa":
                r = run_pca_sa(stream, cfg.horizon, plan.schedule, record_every=cfg.record_every)
            else:
                r = run_pca_block(stream, cfg.horizon, int(p["block"]))
            runs.append(r)
            per_seed[str(s)] = {"q": stream.q, "final": {"angle_to_q": r.angle[-1], "norm": r.norm[-1]}}
            written.append(_write(out / f"trace_seed{s}.csv", r.csv_text()))
        written.append(_write(out / "aggregate.csv", _pca_aggregate(runs)))
        rule_desc = {"rule": cfg.algorithm}
    else:
        if cfg.algorithm == "csma_rvi":
            p = cfg.params
            traces = []
            for s in cfg.seeds:
                cr = csma_rvi_run(plan.matrix, plan.x0, cfg.horizon, s, schedule=plan.schedule, noise=plan.noise,
                                  gain=float(p["gain"]), warmup=float(p["warmup"]), i0=int(p["i0"]),
                                  estimate=p["estimate"], record_every=cfg.record_every,
                                  local_clock=cfg.local_clock, method=p["method"])
                per_seed[str(s)] = {"csma": cr.trace.metadata.pop("csma")}
                traces.append(cr.trace)
            plan.oracle["links"] = len(cr.family.links)
            rule_desc = traces[0].metadata["rule"]
        else:
            traces = run_many(plan.rule, plan.x0, plan.schedule, plan.activation, plan.noise, cfg.horizon,
                              list(cfg.seeds), cfg.record_every, local_clock=cfg.local_clock)
            rule_desc = plan.rule.describe()
        for s, t in zip(cfg.seeds, traces):
            per_seed.setdefault(str(s), {})["final"] = _final_row(t)
            written.append(_write(out / f"trace_seed{s}.csv", t.csv_text()))
        written.append(_write(out / "aggregate.csv", multi_seed_aggregate(traces).csv_text()))
    meta = {"config": cfg.to_dict(), "oracle": plan.oracle, "rule": rule_desc, "network": plan.network_meta,
            "seeds": per_seed}
    written.append(_write(out / "metadata.json", json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n"))
    return written


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def run_suite(configs, out_dir=None) -> list[Path]:
    written = []
    for cfg in configs:
        base = Path(out_dir if out_dir is not None else cfg.output)
        target = base / cfg.label if len(configs) > 1 and cfg.label else base
        written.extend(run_experiment(cfg, target))
    return written


# ---------------------------------------------------------------- presets

_ER100 = {"kind": "erdos_renyi", "d": 100, "p_edge": 0.2, "seed": 2024}
_X0_ER100 = {"kind": "uniform", "low": 0.0, "high": 1.0, "seed": 2024}
_SLOW_NODES = {"kind": "periodic_random", "offset": 10}
_POLY = {"kind": "polynomial", "value": 1.0, "power": 0.75}


def _chain(d):
    A = np.zeros((d, d))
    for i in range(d - 1):
        A[i, i + 1] = A[i + 1, i] = 1.0
    return (A / A.sum(axis=1, keepdims=True)).tolist()


def _directed_adjacency(d, density, seed):
    rng = np.random.default_rng(seed)
    while True:
        A = (rng.random((d, d)) < density).astype(float)
        np.fill_diagonal(A, 0)
        if np.all(A.sum(axis=0) > 0) and np.all(A.sum(axis=1) > 0):
            return A.tolist()


def _importance_preset(variance):
    return {
        "algorithm": {"id": "importance"}, "network": _ER100, "x0": _X0_ER100, "schedule": _POLY,
        "activation": _SLOW_NODES, "noise": {"variance": variance}, "horizon": 100000, "record_every": 1000,
        "seeds": {"count": 20}, "local_clock": True,
        "variants": [{"label": "target_polling", "algorithm": {"params": {"polling": "target"}}},
                     {"label": "optimal_polling", "algorithm": {"params": {"polling": "optimal"}}}],
    }


PRESETS = {
    "fig1_two_node": ("Two-node network, node 2 twice as active: vanilla and RVI, with and without noise", {
        "network": {"kind": "inline", "matrix": TWO_NODE_P.tolist()},
        "x0": {"kind": "inline", "values": TWO_NODE_X0.tolist()},
        "activation": {"kind": "bernoulli", "rates": list(TWO_NODE_RATES)},
        "horizon": 20000, "record_every": 10, "seeds": {"count": 20},
        "variants": [
            {"label": "vanilla_noiseless", "algorithm": {"id": "vanilla"},
             "schedule": {"kind": "harmonic_blocked", "value": 0.02, "block": 1000}},
            {"label": "vanilla_awgn", "algorithm": {"id": "vanilla"}, "noise": {"variance": 0.25},
             "schedule": {"kind": "harmonic_blocked", "value": 0.02, "block": 1000}},
            {"label": "rvi_noiseless", "algorithm": {"id": "rvi"}, "schedule": _POLY},
            {"label": "rvi_awgn", "algorithm": {"id": "rvi"}, "schedule": _POLY, "noise": {"variance": 0.25}},
        ],
    }),
    "fig2_er100_rvi": ("RVI on a 100-node Erdos-Renyi graph, AWGN 0.25, mean inter-update 10+j", {
        "algorithm": {"id": "rvi"}, "network": _ER100, "x0": _X0_ER100, "schedule": _POLY,
        "activation": _SLOW_NODES, "noise": {"variance": 0.25}, "horizon": 100000, "record_every": 1000,
        "seeds": {"count": 20}, "local_clock": True,
    }),
    "fig3_csma": ("RVI driven by CSMA link activations with learned multipliers, 100-node graph", {
        "algorithm": {"id": "csma_rvi"}, "network": _ER100, "x0": _X0_ER100, "schedule": _POLY,
        "noise": {"variance": 0.25}, "horizon": 50000, "record_every": 1000, "seeds": {"count": 10},
        "local_clock": True,
    }),
    "fig4_multihop": ("Single-hop against two-hop pulls (alpha = 0.8), 100-node graph", {
        "algorithm": {"id": "multihop"}, "network": _ER100, "x0": _X0_ER100,
        "schedule": {"kind": "harmonic", "value": 1.0}, "activation": _SLOW_NODES, "horizon": 40000,
        "record_every": 100, "seeds": {"count": 20}, "local_clock": True,
        "variants": [{"label": "single_hop", "algorithm": {"params": {"alpha": 1.0}}},
                     {"label": "two_hop", "algorithm": {"params": {"alpha": 0.8}}}],
    }),
    "fig5_importance_noiseless": ("Polling from P against sqrt-optimal polling, noiseless", _importance_preset(0.0)),
    "fig6_importance_noisy": ("Polling from P against sqrt-optimal polling, AWGN 0.25", _importance_preset(0.25)),
    "fig7_pca": ("Streaming principal eigenvector, d = 20: stochastic rule against block averaging", {
        "algorithm": {"id": "pca_sa", "params": {"d": 20, "sigma": 1.0}},
        "schedule": {"kind": "harmonic", "value": 1.0}, "horizon": 80000, "record_every": 1000,
        "seeds": {"count": 20},
        "variants": [{"label": "stochastic"},
                     {"label": "block", "algorithm": {"id": "pca_block", "params": {"block": 4000}}}],
    }),
    "pf_random10": ("Perron vector of a random nonnegative 10x10 matrix, synchronous and asynchronous", {
        "algorithm": {"id": "pf"}, "network": {"kind": "random_nonnegative", "d": 10, "density": 0.5, "seed": 0},
        "x0": {"kind": "uniform", "low": 0.5, "high": 1.5, "seed": 0},
        "schedule": {"kind": "harmonic", "value": 1.0}, "horizon": 50000, "record_every": 500,
        "seeds": {"count": 20},
        "variants": [{"label": "synchronous"},
                     {"label": "asynchronous", "local_clock": True,
                      "activation": {"kind": "bernoulli", "rates": np.linspace(0.2, 1.0, 10).tolist()}}],
    }),
    "pagerank_chain": ("PageRank of a 6-node chain, teleport 0.15", {
        "algorithm": {"id": "pagerank", "params": {"eps": 0.15}},
        "network": {"kind": "inline", "matrix": _chain(6)},
        "x0": {"kind": "constant", "value": 1 / 6}, "schedule": {"kind": "harmonic", "value": 1.0},
        "horizon": 50000, "record_every": 500, "seeds": {"count": 20},
    }),
    "hits_digraph": ("HITS authority scores of a random 10-node digraph", {
        "algorithm": {"id": "hits"}, "network": {"kind": "inline", "matrix": _directed_adjacency(10, 0.3, 5)},
        "x0": {"kind": "constant", "value": 1.0}, "schedule": {"kind": "harmonic", "value": 1.0},
        "horizon": 50000, "record_every": 500, "seeds": {"count": 20},
    }),
    "reputation_er": ("Reputation scores from noisy 1-10 ratings on a 10-node graph", {
        "algorithm": {"id": "reputation", "params": {"ratings_seed": 7}},
        "network": {"kind": "erdos_renyi", "d": 10, "p_edge": 0.5, "seed": 7},
        "x0": {"kind": "constant", "value": 1.0}, "schedule": {"kind": "polynomial", "value": 0.9, "power": 0.6},
        "horizon": 300000, "record_every": 3000, "seeds": {"count": 10},
    }),
}


def list_presets() -> list[tuple[str, str]]:
    return [(name, desc) for name, (desc, _) in PRESETS.items()]


def preset_config(name: str, seed_count: int | None = None, horizon: int | None = None) -> dict:
    if name not in PRESETS:
        raise ConfigError([f"preset: unknown preset {name!r}; see list-presets"])
    obj = {"name": name, **copy.deepcopy(PRESETS[name][1])}
    if seed_count is not None:
        obj["seeds"] = {"count": seed_count}
    if horizon is not None:
        obj["horizon"] = horizon
        # keep block lengths dividing the shortened horizon
        for v in [obj, *obj.get("variants", [])]:
            params = v.get("algorithm", {}).get("params", {})
            if "block" in params and horizon % params["block"]:
                params["block"] = horizon
    return obj


# -------------------------------------------------------------------- main

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="asyncgossip", description="Asynchronous gossip experiment runner")
    sub = ap.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="run the experiments in a JSON config")
    r.add_argument("config")
    r.add_argument("--out", help="override the output directory")
    p = sub.add_parser("preset", help="run a named preset")
    p.add_argument("name")
    p.add_argument("--seed-count", type=int)
    p.add_argument("--horizon", type=int, help="shorter horizon for a quick look")
    p.add_argument("--out")
    p.add_argument("--dump", action="store_true", help="print the preset config instead of running it")
    sub.add_parser("list-presets", help="list preset names")
    v = sub.add_parser("validate", help="check a JSON config without running it")
    v.add_argument("config")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "list-presets":
            for name, desc in list_presets():
                print(f"{name}\t{desc}")
            return EXIT_OK
        if args.verb == "validate":
            configs = load_config(args.config)
            print(f"ok: {len(configs)} experiment(s)")
            return EXIT_OK
        if args.verb == "run":
            configs = load_config(args.config)
        else:
            obj = preset_config(args.name, args.seed_count, args.horizon)
            if args.dump:
                print(json.dumps(obj, indent=2))
                return EXIT_OK
            configs = parse_suite(obj)
        out = args.out
        if out is not None and args.verb == "preset":
            Path(out).mkdir(parents=True, exist_ok=True)
        written = run_suite(configs, out)
        if args.verb == "preset":
            base = Path(out if out is not None else configs[0].output)
            _write(base / "config.json", json.dumps(obj, indent=2, sort_keys=True) + "\n")
        print(f"wrote {len(written)} files")
        return EXIT_OK
    except ConfigError as exc:
        for line in exc.problems:
            print(f"invalid config: {line}", file=sys.stderr)
        return EXIT_INVALID
    except ValidationError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericAbort as exc:
        print(f"numeric abort: seed {exc.seed}, tick {exc.tick}, node {exc.node}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GossipError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
