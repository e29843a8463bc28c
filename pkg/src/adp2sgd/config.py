"""Experiment configuration: JSON schema, validation and object construction."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema

from . import analysis, engine, privacy, tasks, topology
from .errors import ConfigError

SCHEMA_VERSION = 1

_pos_num = {"type": "number", "exclusiveMinimum": 0}
_pos_int = {"type": "integer", "minimum": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "task", "batch_size"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "task": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "dim", "n_workers", "shard_sizes"],
            "properties": {
                "kind": {"enum": list(tasks.TASK_KINDS)},
                "dim": _pos_int,
                "n_workers": {"type": "integer", "minimum": 2},
                "shard_sizes": {"oneOf": [_pos_int, {"type": "array", "items": _pos_int, "minItems": 2}]},
                "seed": {"type": "integer", "minimum": 0},
                "clip_bound": _pos_num,
                "clipping": {"type": "boolean"},
                "weights": {"type": ["array", "null"], "items": {"type": "number", "minimum": 0}},
                "heterogeneity": {"type": "number", "minimum": 0},
                "spread": {"type": "number", "minimum": 0},
            },
        },
        "graph": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["ring", "full_bipartite", "complete", "custom"]},
                "edges": {"type": ["array", "null"], "items": {
                    "type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2}},
                "senders": {"type": ["array", "null"], "items": {"type": "integer", "minimum": 0}},
            },
        },
        "mode": {"enum": ["adpsgd", "sync"]},
        "engine": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "timing": {"enum": ["physical", "logical"]},
                "snapshot": {"enum": ["serialized", "interleaved"]},
                "staleness_guard": {"type": ["integer", "null"], "minimum": 0},
            },
        },
        "privacy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "raw_sigma": {"type": ["number", "null"], "minimum": 0},
                "calibrated": {
                    "type": ["object", "null"],
                    "additionalProperties": False,
                    "required": ["eps", "delta"],
                    "properties": {
                        "eps": _pos_num,
                        "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                        "mu": {"oneOf": [{"const": "auto"},
                                         {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}]},
                        "grid": {"type": "integer", "minimum": 10},
                    },
                },
            },
        },
        "eta": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "lr_rule": {"enum": ["prop1", None]},
        "batch_size": _pos_int,
        "iterations": {"type": ["integer", "null"], "minimum": 1},
        "epochs": {"type": ["integer", "null"], "minimum": 1},
        "scenario": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(engine.SCENARIO_KINDS)},
                "factor": {"type": "number", "minimum": 1},
                "worker": {"type": "integer", "minimum": 0},
                "per_iteration": {"type": "boolean"},
                "batch_mult": _pos_num,
                "lr_mult": _pos_num,
                "base_compute_time": _pos_num,
                "comm_time": {"type": ["number", "null"], "minimum": 0},
                "jitter": {"type": "number", "minimum": 0},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "probe_stride": _pos_int,
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "trace": {"type": "string"},
                "report": {"type": "string"},
            },
        },
    },
}


@dataclass
class TaskSpec:
    kind: str
    dim: int
    n_workers: int
    shard_sizes: int | list[int]
    seed: int = 0
    clip_bound: float = 1.0
    clipping: bool = True
    weights: list[float] | None = None
    heterogeneity: float = 1.0
    spread: float = 1.0


@dataclass
class GraphSpec:
    kind: str = "ring"
    edges: list[list[int]] | None = None
    senders: list[int] | None = None


@dataclass
class EngineSpec:
    timing: str = "physical"
    snapshot: str = "serialized"
    staleness_guard: int | None = None


@dataclass
class CalibratedSpec:
    eps: float
    delta: float
    mu: float | str = 0.5
    grid: int = 99


@dataclass
class PrivacySpec:
    raw_sigma: float | None = None
    calibrated: CalibratedSpec | None = None


@dataclass
class ScenarioSpec:
    kind: str = "none"
    factor: float = 1.0
    worker: int = 0
    per_iteration: bool = True
    batch_mult: float = 1.0
    lr_mult: float = 1.0
    base_compute_time: float = 1.0
    comm_time: float | None = None
    jitter: float = 0.0


@dataclass
class OutputSpec:
    dir: str = "runs"
    trace: str = "trace.csv"
    report: str = "report.json"


@dataclass
class ExperimentConfig:
    task: TaskSpec
    batch_size: int
    schema_version: int = SCHEMA_VERSION
    graph: GraphSpec = field(default_factory=GraphSpec)
    mode: str = "adpsgd"
    engine: EngineSpec = field(default_factory=EngineSpec)
    privacy: PrivacySpec = field(default_factory=lambda: PrivacySpec(raw_sigma=0.0))
    eta: float | None = None
    lr_rule: str | None = None
    iterations: int | None = None
    epochs: int | None = None
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    seed: int = 0
    probe_stride: int = 100
    output: OutputSpec = field(default_factory=OutputSpec)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    @property
    def total_updates(self) -> int:
        if self.mode == "sync":
            return self.epochs * self.task.n_workers
        return self.iterations

    @property
    def effective_batch_size(self) -> int:
        if self.scenario.kind == "large_batch":
            return int(round(self.batch_size * self.scenario.batch_mult))
        return self.batch_size


def _cross_checks(raw: dict) -> list[str]:
    errors = []
    priv = raw.get("privacy", {"raw_sigma": 0.0})
    has_raw = priv.get("raw_sigma") is not None
    has_cal = priv.get("calibrated") is not None
    if has_raw and has_cal:
        errors.append("privacy: 'raw_sigma' and 'calibrated' are mutually exclusive; give exactly one")
    elif not has_raw and not has_cal:
        errors.append("privacy: one of 'raw_sigma' or 'calibrated' is required")
    has_eta = raw.get("eta") is not None
    has_rule = raw.get("lr_rule") is not None
    if has_eta == has_rule:
        errors.append("exactly one of 'eta' and 'lr_rule' must be set")
    mode = raw.get("mode", "adpsgd")
    if mode == "adpsgd" and raw.get("iterations") is None:
        errors.append("mode 'adpsgd' requires 'iterations'")
    if mode == "sync" and raw.get("epochs") is None:
        errors.append("mode 'sync' requires 'epochs'")
    if mode == "adpsgd" and raw.get("epochs") is not None:
        errors.append("'epochs' only applies to mode 'sync'")
    if mode == "sync" and raw.get("iterations") is not None:
        errors.append("'iterations' only applies to mode 'adpsgd'")

    task = raw.get("task", {})
    K = task.get("n_workers")
    graph = raw.get("graph", {})
    gkind = graph.get("kind", "ring")
    if isinstance(K, int):
        if gkind in ("ring", "full_bipartite") and K % 2:
            errors.append(f"graph: '{gkind}' needs an even number of workers, got n_workers={K}")
        sizes = task.get("shard_sizes")
        if isinstance(sizes, list) and len(sizes) != K:
            errors.append(f"task: shard_sizes has {len(sizes)} entries for {K} workers")
        weights = task.get("weights")
        if weights is not None:
            if len(weights) != K:
                errors.append(f"task: weights has {len(weights)} entries for {K} workers")
            elif abs(math.fsum(weights) - 1.0) > 1e-12:
                errors.append("task: weights must sum to 1")
        scen = raw.get("scenario", {})
        if scen.get("kind") == "fixed_straggler" and scen.get("worker", 0) >= K:
            errors.append(f"scenario: straggler worker {scen.get('worker')} out of range")
    if gkind == "custom" and not graph.get("edges"):
        errors.append("graph: kind 'custom' requires 'edges'")
    if has_cal and task.get("clipping") is False:
        errors.append("privacy: calibrated mode requires gradient clipping")
    return errors


def _sorted_errors(validator, raw):
    out = []
    for err in sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path))):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        out.append(f"{where}: {err.message}")
    return out


def parse_config_dict(raw: dict) -> ExperimentConfig:
    """Validate ``raw`` and build the config; every problem is reported at once."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = _sorted_errors(validator, raw)
    if not errors:
        errors = _cross_checks(raw)
    if errors:
        raise ConfigError(errors)
    cfg = dict(raw)
    cfg["task"] = TaskSpec(**raw["task"])
    cfg["graph"] = GraphSpec(**raw.get("graph", {}))
    cfg["engine"] = EngineSpec(**raw.get("engine", {}))
    priv = dict(raw.get("privacy", {"raw_sigma": 0.0}))
    if priv.get("calibrated") is not None:
        priv["calibrated"] = CalibratedSpec(**priv["calibrated"])
    cfg["privacy"] = PrivacySpec(**priv)
    scen = dict(raw.get("scenario", {}))
    if scen.get("comm_time") is None:
        scen["comm_time"] = 0.1 * scen.get("base_compute_time", 1.0)
    cfg["scenario"] = ScenarioSpec(**scen)
    cfg["output"] = OutputSpec(**raw.get("output", {}))
    config = ExperimentConfig(**cfg)
    try:
        build_graph(config)
    except Exception as err:
        raise ConfigError([f"graph: {err}"]) from err
    return config


def parse_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError([f"{path}: not valid JSON ({err})"]) from err
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be an object"])
    return parse_config_dict(raw)


# -- building runtime objects -------------------------------------------------------


def build_task(config: ExperimentConfig) -> tasks.Task:
    t = config.task
    return tasks.make_task(
        t.kind, t.dim, t.n_workers, t.shard_sizes, seed=t.seed,
        clip_bound=t.clip_bound if t.clipping else math.inf,
        weights=t.weights, heterogeneity=t.heterogeneity, spread=t.spread,
    )


def build_graph(config: ExperimentConfig) -> topology.CommGraph:
    g, K = config.graph, config.task.n_workers
    if g.kind == "ring":
        return topology.ring_partition(K)
    if g.kind == "full_bipartite":
        return topology.full_bipartite(K)
    if g.kind == "complete":
        return topology.complete_graph(K)
    edges = frozenset(tuple(e) for e in g.edges)
    if g.senders is None:
        return topology.CommGraph(K, edges)
    senders = frozenset(g.senders)
    return topology.CommGraph(K, edges, senders, frozenset(range(K)) - senders)


def build_scenario(config: ExperimentConfig) -> engine.Scenario:
    return engine.Scenario(**asdict(config.scenario))


def build_privacy(config: ExperimentConfig, mu_override=None, task: tasks.Task | None = None):
    """Noise setting for the run: a :class:`PrivacyParams` bundle or a raw variance."""
    p = config.privacy
    if p.calibrated is None:
        return float(p.raw_sigma) ** 2
    c = p.calibrated
    task = build_task(config) if task is None else task
    mu = c.mu if mu_override is None else mu_override
    args = (c.eps, c.delta, task.n_workers, task.min_shard_size, config.effective_batch_size,
            config.total_updates, task.clip_bound)
    if mu == "auto":
        return privacy.find_mu(*args, grid=c.grid)
    eps, delta, K, n1, B, T, G = args
    return privacy.calibrate_sigma(eps, delta, float(mu), K, n1, B, T, G)


def learning_rate(config: ExperimentConfig) -> tuple[float, str]:
    """Base learning rate (before scenario scaling) and the rule that produced it."""
    if config.eta is not None:
        return float(config.eta), "fixed"
    return analysis.prop1_learning_rate(config.task.n_workers, config.batch_size, config.total_updates), "prop1"
