"""Deterministic discrete-event simulation of noisy decentralized and synchronous SGD.

Two training loops share one event model:

* :func:`run_adpsgd` -- asynchronous pairwise gossip. Each worker repeatedly
  snapshots its local model, computes a clipped, noised minibatch gradient over a
  virtual compute interval, averages its model with one neighbour and applies the
  update. A global counter stops the run after ``T`` updates.
* :func:`run_sync` -- every worker computes a gradient at the shared model, updates
  locally, and an allreduce barrier replaces all models by their mean.

Events are ordered by ``(virtual_time, seq)``; all randomness comes from named
sub-streams of one seed, so a run is a pure function of its arguments.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

from . import tasks
from ._rng import substream
from .errors import DomainError, EmptyTraceError, InfeasibleBudgetError, StalenessGuardError
from .privacy import PrivacyParams, add_noise, feasibility_checks, per_iteration_epsilon
from .topology import CommGraph, average_pair, sample_partner

EVENT_KINDS = ("gradient_ready", "gossip_exchange", "sync_barrier", "metric_probe")
SCENARIO_KINDS = ("none", "random_slow", "fixed_straggler", "large_batch")


@dataclass(frozen=True)
class Scenario:
    """Compute-time heterogeneity.

    ``random_slow`` slows one uniformly chosen worker by ``factor`` in every
    iteration (or one worker for the whole run when ``per_iteration`` is false);
    ``fixed_straggler`` always slows ``worker``; ``large_batch`` multiplies the batch
    size and learning rate instead of changing compute times.
    """

    kind: str = "none"
    factor: float = 1.0
    worker: int = 0
    per_iteration: bool = True
    batch_mult: float = 1.0
    lr_mult: float = 1.0
    base_compute_time: float = 1.0
    comm_time: float | None = None
    jitter: float = 0.0

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise DomainError(f"unknown scenario kind {self.kind!r}")
        if self.factor < 1:
            raise DomainError("slowdown factor must be >= 1")
        if self.batch_mult <= 0 or self.lr_mult <= 0:
            raise DomainError("batch and learning-rate multipliers must be positive")
        if self.base_compute_time <= 0:
            raise DomainError("base compute time must be positive")
        if self.jitter < 0:
            raise DomainError("jitter must be non-negative")
        if self.comm_time is None:
            object.__setattr__(self, "comm_time", 0.1 * self.base_compute_time)
        elif self.comm_time < 0:
            raise DomainError("communication time must be non-negative")


@lru_cache(maxsize=65536)
def _slowed_worker(seed: int, iteration: int, n_workers: int) -> int:
    return int(substream(seed, "scenario", iteration).integers(n_workers))


def apply_scenario(scenario: Scenario, worker: int, iteration: int, n_workers: int, seed: int = 0) -> float:
    """Compute-time multiplier of ``worker`` at its ``iteration``-th minibatch.

    For ``random_slow`` the slowed worker of an iteration depends only on
    ``(seed, iteration)``, so exactly one worker is slowed per iteration index.
    """
    if scenario.kind == "random_slow":
        it = iteration if scenario.per_iteration else 0
        return scenario.factor if worker == _slowed_worker(seed, it, n_workers) else 1.0
    if scenario.kind == "fixed_straggler":
        return scenario.factor if worker == scenario.worker else 1.0
    return 1.0


class TraceRecord(NamedTuple):
    virtual_time: float
    global_iter: int
    worker: int
    event: str
    loss: float
    grad_norm_sq: float
    staleness: int
    eps_spent: float


@dataclass
class TrainingTrace:
    mode: str
    n_workers: int
    iterations: int
    records: list[TraceRecord] = field(default_factory=list)
    probes: list[tuple[int, np.ndarray]] = field(default_factory=list)
    final_models: np.ndarray | None = None
    total_time: float = 0.0
    eta: float = math.nan
    batch_size: int = 0
    sigma2: float = 0.0
    lr_rule: str = "fixed"
    seed: int = 0

    @property
    def final_theta(self) -> np.ndarray:
        return self.final_models.mean(axis=0)

    @property
    def updates(self) -> int:
        return sum(1 for r in self.records if r.event == "gradient_ready")


def _prepare(task, noise, scenario, eta, batch_size, total_updates):
    scenario = Scenario() if scenario is None else scenario
    if scenario.kind == "large_batch":
        batch_size = int(round(batch_size * scenario.batch_mult))
        eta = eta * scenario.lr_mult
    if not eta > 0:
        raise DomainError(f"learning rate must be positive, got {eta!r}")
    if total_updates < 1:
        raise DomainError("need at least one iteration")
    if batch_size > task.min_shard_size or batch_size < 1:
        raise DomainError(f"batch size {batch_size} not in [1, {task.min_shard_size}]")
    if isinstance(noise, PrivacyParams):
        params = noise
        failed = [c for c in feasibility_checks(params) if not c.ok]
        if failed:
            raise InfeasibleBudgetError("refusing to run with an infeasible privacy bundle", failed, params.mu)
        expected = {"T": total_updates, "B": batch_size, "K": task.n_workers, "n1": task.min_shard_size}
        for name, value in expected.items():
            if getattr(params, name) != value:
                raise DomainError(
                    f"privacy bundle calibrated for {name}={getattr(params, name)}, run uses {value}"
                )
        if params.G != task.clip_bound:
            raise DomainError(f"privacy bundle assumes G={params.G}, task clips at {task.clip_bound}")
        sigma2 = params.sigma2
    else:
        params = None
        sigma2 = float(noise)
        if not sigma2 >= 0:
            raise DomainError("noise variance must be non-negative")
    return scenario, params, sigma2, eta, batch_size


class _Recorder:
    def __init__(self, trace, task, params, stride, observer):
        if stride < 1:
            raise DomainError("probe stride must be >= 1")
        self.trace, self.task, self.params, self.stride = trace, task, params, stride
        self.observer = observer
        self.last_probe = -1

    def eps(self, t):
        return math.nan if self.params is None else per_iteration_epsilon(t, self.params)

    def add(self, time, t, worker, event, staleness=-1):
        self.trace.records.append(
            TraceRecord(time, t, worker, event, math.nan, math.nan, staleness, self.eps(t))
        )

    def probe(self, time, t, models, force=False):
        if not force and t // self.stride == self.last_probe // self.stride:
            return
        self.last_probe = t
        theta = models.mean(axis=0)
        g = tasks.full_gradient(self.task, theta)
        self.trace.records.append(
            TraceRecord(time, t, -1, "metric_probe", tasks.loss(self.task, theta),
                        float(g @ g), -1, self.eps(t))
        )
        self.trace.probes.append((t, theta))

    def notify(self, event, worker, models, **info):
        if self.observer is not None:
            self.observer(event, worker, models, **info)


def _worker_streams(seed, K):
    return [
        {name: substream(seed, "worker", k, name) for name in ("batch", "noise", "gossip", "jitter")}
        for k in range(K)
    ]


def _duration(scenario, k, local_iter, K, seed, jitter_rng):
    d = scenario.base_compute_time * apply_scenario(scenario, k, local_iter, K, seed)
    if scenario.jitter > 0:
        d *= 1.0 + scenario.jitter * jitter_rng.random()
    return d


def _noisy_gradient(task, w, k, B, sigma2, streams):
    batch = tasks.sample_minibatch(task.shards[k], B, streams["batch"])
    g = tasks.minibatch_gradient(task, w, k, batch)
    return add_noise(g, sigma2, streams["noise"])


Observer = Callable[..., None]


def run_adpsgd(
    task: tasks.Task,
    graph: CommGraph,
    noise: PrivacyParams | float,
    scenario: Scenario | None,
    eta: float,
    batch_size: int,
    iterations: int,
    seed: int = 0,
    *,
    timing: str = "physical",
    snapshot: str = "serialized",
    staleness_guard: int | None = None,
    probe_stride: int = 100,
    lr_rule: str = "fixed",
    observer: Observer | None = None,
) -> TrainingTrace:
    """Asynchronous decentralized parallel SGD with Gaussian gradient noise.

    Args:
        noise: a calibrated :class:`PrivacyParams` bundle, or a raw noise variance.
        timing: ``"physical"`` activates whichever worker finishes its gradient next
            in virtual time; ``"logical"`` draws the active worker i.i.d. from the
            task weights with zero-duration events (no staleness).
        snapshot: ``"serialized"`` averages and updates atomically when the gradient
            is ready; ``"interleaved"`` performs the neighbour exchange when the
            gradient computation starts, overlapping it with compute.
        staleness_guard: raise :class:`StalenessGuardError` if an update is staler.
        observer: called as ``observer(event, worker, models, **info)`` after every
            state change; used by tests to check invariants.
    """
    if graph.n_workers != task.n_workers:
        raise DomainError("graph and task disagree on the number of workers")
    if timing not in ("physical", "logical"):
        raise DomainError(f"unknown timing mode {timing!r}")
    if snapshot not in ("serialized", "interleaved"):
        raise DomainError(f"unknown snapshot mode {snapshot!r}")
    scenario, params, sigma2, eta, B = _prepare(task, noise, scenario, eta, batch_size, iterations)
    K, T = task.n_workers, iterations
    trace = TrainingTrace("adpsgd", K, T, eta=eta, batch_size=B, sigma2=sigma2, lr_rule=lr_rule, seed=seed)
    rec = _Recorder(trace, task, params, probe_stride, observer)
    streams = _worker_streams(seed, K)
    W = np.tile(np.asarray(task.initial, dtype=float), (K, 1))
    rec.probe(0.0, 0, W, force=True)

    def exchange(k, time):
        j = sample_partner(graph, k, streams[k]["gossip"])
        average_pair(W, k, j)
        rec.notify("gossip_exchange", k, W, partner=j, time=time)
        return j

    t = 0
    now = 0.0
    if timing == "logical":
        act = substream(seed, "activation")
        uniform = np.allclose(task.weights, 1.0 / K, rtol=0, atol=1e-15)
        while t < T:
            k = int(act.integers(K)) if uniform else int(act.choice(K, p=task.weights))
            g = _noisy_gradient(task, W[k], k, B, sigma2, streams[k])
            exchange(k, now)
            W[k] -= eta * g
            t += 1
            rec.add(now, t, k, "gradient_ready", 0)
            rec.notify("gradient_ready", k, W, step=eta * g, staleness=0)
            rec.probe(now, t, W, force=t == T)
    else:
        heap: list = []
        seq = itertools.count()
        snap = W.copy()
        tag = np.zeros(K, dtype=int)
        local_iter = np.zeros(K, dtype=int)

        def start(k, time):
            snap[k] = W[k]
            tag[k] = t
            if snapshot == "interleaved":
                exchange(k, time)
                rec.add(time, t, k, "gossip_exchange")
            d = _duration(scenario, k, int(local_iter[k]), K, seed, streams[k]["jitter"])
            heapq.heappush(heap, (time + d, next(seq), k))

        for k in range(K):
            start(k, 0.0)
        while t < T:
            now, _, k = heapq.heappop(heap)
            g = _noisy_gradient(task, snap[k], k, B, sigma2, streams[k])
            if snapshot == "serialized":
                exchange(k, now)
            W[k] -= eta * g
            tau = int(t - tag[k])
            if staleness_guard is not None and tau > staleness_guard:
                raise StalenessGuardError(
                    f"update {t} by worker {k} has staleness {tau} > {staleness_guard}"
                )
            t += 1
            rec.add(now, t, k, "gradient_ready", tau)
            rec.notify("gradient_ready", k, W, step=eta * g, staleness=tau)
            rec.probe(now, t, W, force=t == T)
            local_iter[k] += 1
            if t < T:
                start(k, now)

    trace.final_models = W
    trace.total_time = now
    return trace


def run_sync(
    task: tasks.Task,
    graph: CommGraph,
    noise: PrivacyParams | float,
    scenario: Scenario | None,
    eta: float,
    batch_size: int,
    epochs: int,
    seed: int = 0,
    *,
    probe_stride: int = 100,
    lr_rule: str = "fixed",
    observer: Observer | None = None,
) -> TrainingTrace:
    """Synchronous SGD baseline: local noisy step at the shared model, then allreduce.

    One round advances the global counter by ``K``. The barrier fires at the round
    start plus the slowest worker's compute time plus ``scenario.comm_time``.
    """
    K = task.n_workers
    if graph.n_workers != K:
        raise DomainError("graph and task disagree on the number of workers")
    scenario, params, sigma2, eta, B = _prepare(task, noise, scenario, eta, batch_size, epochs * K)
    trace = TrainingTrace("sync", K, epochs * K, eta=eta, batch_size=B, sigma2=sigma2, lr_rule=lr_rule, seed=seed)
    rec = _Recorder(trace, task, params, probe_stride, observer)
    streams = _worker_streams(seed, K)
    W = np.tile(np.asarray(task.initial, dtype=float), (K, 1))
    rec.probe(0.0, 0, W, force=True)
    t = 0
    now = 0.0
    for r in range(epochs):
        theta = W[0].copy()
        durations = [_duration(scenario, k, r, K, seed, streams[k]["jitter"]) for k in range(K)]
        for k in sorted(range(K), key=lambda k: (durations[k], k)):
            g = _noisy_gradient(task, theta, k, B, sigma2, streams[k])
            W[k] = theta - eta * g
            t += 1
            rec.add(now + durations[k], t, k, "gradient_ready", 0)
            rec.notify("gradient_ready", k, W, step=eta * g, staleness=0)
        now = now + max(durations) + scenario.comm_time
        W[:] = W.mean(axis=0)
        rec.add(now, t, -1, "sync_barrier")
        rec.notify("sync_barrier", -1, W)
        rec.probe(now, t, W, force=r == epochs - 1)
    trace.final_models = W
    trace.total_time = now
    return trace


def throughput_summary(trace: TrainingTrace) -> dict:
    """Aggregate timing and staleness statistics from the trace records.

    ``mean_update_interval`` is ``K * wall_time / updates``: the average virtual time a
    worker spends per update. For SYNC traces the per-round wall times are the gaps
    between consecutive barriers.
    """
    updates = [r for r in trace.records if r.event == "gradient_ready"]
    if not updates:
        raise EmptyTraceError("trace holds no updates")
    wall = max(r.virtual_time for r in trace.records)
    stale = [r.staleness for r in updates]
    out = {
        "updates": len(updates),
        "wall_time": wall,
        "updates_per_time": len(updates) / wall if wall > 0 else math.inf,
        "mean_update_interval": trace.n_workers * wall / len(updates),
        "mean_staleness": float(np.mean(stale)),
        "max_staleness": int(max(stale)),
    }
    barriers = [r.virtual_time for r in trace.records if r.event == "sync_barrier"]
    if barriers:
        out["round_times"] = [float(x) for x in np.diff([0.0] + barriers)]
        out["rounds"] = len(barriers)
        out["mean_round_time"] = wall / len(barriers)
    return out
