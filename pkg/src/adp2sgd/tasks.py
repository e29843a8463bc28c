"""Desk-scale objectives ``F = sum_k p_k F_k`` with per-worker data shards.

Three problem kinds are available:

* ``quadratic`` -- ``f(w; b) = 0.5 * ||w - b||^2``; smoothness 1, closed-form optimum.
* ``logistic``  -- ``f(w; x, y) = log(1 + exp(-y <x, w>))`` with labels in {-1, +1}.
* ``mlp``       -- one hidden layer of 8 tanh units with squared loss.

Gradients are clipped per sample to the task's ``clip_bound`` and then averaged over
the batch, so a batch gradient moves by at most ``2 G / B`` when one sample changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidBatchError

TASK_KINDS = ("quadratic", "logistic", "mlp")
MLP_HIDDEN = 8


@dataclass(frozen=True, eq=False)
class DataShard:
    """Local data of one worker.

    ``x`` holds one row per sample (the centre ``b`` for the quadratic task, the
    input features otherwise); ``y`` holds labels or regression targets.
    """

    worker_id: int
    x: np.ndarray
    y: np.ndarray | None = None

    def __post_init__(self):
        if len(self.x) == 0:
            raise DomainError(f"shard of worker {self.worker_id} is empty")
        if self.y is not None and len(self.y) != len(self.x):
            raise DomainError("shard inputs and targets differ in length")

    @property
    def size(self) -> int:
        return len(self.x)


@dataclass(eq=False)
class Task:
    kind: str
    dim: int
    shards: list[DataShard]
    lipschitz_grad: float
    clip_bound: float
    grad_var: float
    worker_var: float
    weights: np.ndarray
    initial: np.ndarray
    optimal_value: float | None = None
    optimum: np.ndarray | None = None
    variance_source: str = "exact"
    lipschitz_source: str = "exact"
    input_dim: int = field(default=0)

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise DomainError(f"unknown task kind {self.kind!r}")
        if self.dim < 1:
            raise DomainError("dimension must be >= 1")
        if len(self.shards) < 2:
            raise DomainError("a task needs at least two workers")
        if not self.clip_bound > 0:
            raise DomainError("clip_bound must be positive")
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (len(self.shards),) or np.any(self.weights < 0):
            raise DomainError("weights must be one non-negative entry per worker")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights must sum to 1, got {self.weights.sum()!r}")

    @property
    def n_workers(self) -> int:
        return len(self.shards)

    @property
    def min_shard_size(self) -> int:
        return min(s.size for s in self.shards)

    @property
    def clipping(self) -> bool:
        return math.isfinite(self.clip_bound)


# -- per-sample losses and gradients, vectorised over rows of ``x`` ---------------


def _mlp_unpack(w, m):
    h = MLP_HIDDEN
    W1 = w[: h * m].reshape(h, m)
    b1 = w[h * m : h * m + h]
    v = w[h * m + h : h * m + 2 * h]
    c = w[-1]
    return W1, b1, v, c


def _mlp_forward(w, x, m):
    W1, b1, v, c = _mlp_unpack(w, m)
    a = np.tanh(x @ W1.T + b1)
    return a, a @ v + c


def _losses(task: Task, w: np.ndarray, x: np.ndarray, y) -> np.ndarray:
    if task.kind == "quadratic":
        diff = w - x
        return 0.5 * np.einsum("ij,ij->i", diff, diff)
    if task.kind == "logistic":
        return np.logaddexp(0.0, -y * (x @ w))
    _, out = _mlp_forward(w, x, task.input_dim)
    return 0.5 * (out - y) ** 2


def _grads(task: Task, w: np.ndarray, x: np.ndarray, y) -> np.ndarray:
    if task.kind == "quadratic":
        return w - x
    if task.kind == "logistic":
        margin = y * (x @ w)
        # d/dm log(1 + e^-m) = -1 / (1 + e^m)
        coef = -y * np.exp(-np.logaddexp(0.0, margin))
        return coef[:, None] * x
    m = task.input_dim
    W1, b1, v, c = _mlp_unpack(w, m)
    a = np.tanh(x @ W1.T + b1)
    r = a @ v + c - y
    dz = (r[:, None] * v) * (1.0 - a * a)
    n = len(x)
    dW1 = (dz[:, :, None] * x[:, None, :]).reshape(n, -1)
    return np.hstack([dW1, dz, r[:, None] * a, r[:, None]])


def _clip_rows(g: np.ndarray, G: float) -> np.ndarray:
    if not math.isfinite(G):
        return g
    norms = np.linalg.norm(g, axis=1)
    scale = np.minimum(1.0, G / np.maximum(norms, np.finfo(float).tiny))
    return g * scale[:, None]


# -- public operations ------------------------------------------------------------


def sample_minibatch(shard: DataShard, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``batch_size`` distinct sample indices uniformly from ``shard``.

    The indices are returned sorted. Each sample is included with probability
    ``batch_size / shard.size``.
    """
    if not 1 <= batch_size <= shard.size:
        raise InvalidBatchError(
            f"batch size {batch_size} not in [1, {shard.size}] for worker {shard.worker_id}"
        )
    if batch_size == shard.size:
        return np.arange(shard.size)
    return np.sort(rng.choice(shard.size, size=batch_size, replace=False))


def clip(g: np.ndarray, G: float) -> np.ndarray:
    """Project ``g`` onto the l2 ball of radius ``G``."""
    g = np.asarray(g, dtype=float)
    norm = float(np.linalg.norm(g))
    if norm <= G:
        return g.copy()
    return g * (G / norm)


def per_sample_gradient(task: Task, w: np.ndarray, worker: int, sample: int) -> np.ndarray:
    """Unclipped gradient of the loss of one sample of ``worker`` at ``w``."""
    shard = task.shards[worker]
    if not 0 <= sample < shard.size:
        raise InvalidBatchError(f"sample index {sample} out of range for worker {worker}")
    y = None if shard.y is None else shard.y[sample : sample + 1]
    return _grads(task, np.asarray(w, dtype=float), shard.x[sample : sample + 1], y)[0]


def per_sample_loss(task: Task, w: np.ndarray, worker: int, sample: int) -> float:
    shard = task.shards[worker]
    y = None if shard.y is None else shard.y[sample : sample + 1]
    return float(_losses(task, np.asarray(w, dtype=float), shard.x[sample : sample + 1], y)[0])


def minibatch_gradient(task: Task, w: np.ndarray, worker: int, batch) -> np.ndarray:
    """Mean of the per-sample gradients over ``batch``, each clipped to ``clip_bound``."""
    batch = np.asarray(batch, dtype=int)
    if batch.size == 0:
        raise InvalidBatchError("empty batch")
    shard = task.shards[worker]
    y = None if shard.y is None else shard.y[batch]
    g = _grads(task, np.asarray(w, dtype=float), shard.x[batch], y)
    return _clip_rows(g, task.clip_bound).mean(axis=0)


def local_gradient(task: Task, w: np.ndarray, worker: int) -> np.ndarray:
    """Exact unclipped gradient of ``F_k``."""
    shard = task.shards[worker]
    return _grads(task, np.asarray(w, dtype=float), shard.x, shard.y).mean(axis=0)


def full_gradient(task: Task, w: np.ndarray) -> np.ndarray:
    """Exact unclipped gradient of ``F`` over all data."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(task.dim)
    for p, shard in zip(task.weights, task.shards):
        out += p * _grads(task, w, shard.x, shard.y).mean(axis=0)
    return out


def loss(task: Task, w: np.ndarray) -> float:
    w = np.asarray(w, dtype=float)
    return float(
        sum(p * _losses(task, w, s.x, s.y).mean() for p, s in zip(task.weights, task.shards))
    )


# -- task construction ------------------------------------------------------------


def _gradient_variances(task: Task, points) -> tuple[float, float]:
    """Largest within-worker and across-worker gradient variance over ``points``."""
    within = across = 0.0
    for w in points:
        full = full_gradient(task, w)
        acc = 0.0
        for p, shard in zip(task.weights, task.shards):
            g = _grads(task, w, shard.x, shard.y)
            local = g.mean(axis=0)
            within = max(within, float(np.mean(np.sum((g - local) ** 2, axis=1))))
            acc += p * float(np.sum((local - full) ** 2))
        across = max(across, acc)
    return within, across


def _estimate_lipschitz(task: Task, rng: np.random.Generator, n_draws: int = 2000) -> float:
    best = 0.0
    h = 1e-4
    for _ in range(n_draws):
        k = rng.integers(task.n_workers)
        shard = task.shards[k]
        i = rng.integers(shard.size)
        x = shard.x[i : i + 1]
        y = None if shard.y is None else shard.y[i : i + 1]
        w = task.initial + rng.normal(size=task.dim)
        u = rng.normal(size=task.dim)
        u /= np.linalg.norm(u)
        diff = _grads(task, w + h * u, x, y)[0] - _grads(task, w - h * u, x, y)[0]
        best = max(best, float(np.linalg.norm(diff)) / (2 * h))
    return best


def _shard_sizes(shard_sizes, n_workers: int) -> list[int]:
    if isinstance(shard_sizes, (int, np.integer)):
        sizes = [int(shard_sizes)] * n_workers
    else:
        sizes = [int(s) for s in shard_sizes]
    if len(sizes) != n_workers:
        raise DomainError(f"expected {n_workers} shard sizes, got {len(sizes)}")
    if min(sizes) < 1:
        raise DomainError("every shard must hold at least one sample")
    return sizes


def make_task(
    kind: str,
    dim: int,
    n_workers: int,
    shard_sizes,
    seed: int = 0,
    clip_bound: float = math.inf,
    weights=None,
    heterogeneity: float = 1.0,
    spread: float = 1.0,
    variance_draws: int = 10_000,
) -> Task:
    """Generate a synthetic task.

    Args:
        kind: one of ``quadratic``, ``logistic``, ``mlp``.
        dim: model dimension for ``quadratic``/``logistic``; input dimension for
            ``mlp`` (the model then has ``8 * dim + 17`` parameters).
        n_workers: number of shards ``K``.
        shard_sizes: one size for all shards, or a list with one entry per worker.
        seed: data-generation seed.
        clip_bound: per-sample gradient bound ``G``; ``inf`` disables clipping.
        weights: worker weights ``p_k``; uniform when omitted.
        heterogeneity: scale of the per-worker shift of the data distribution.
        spread: within-worker scale of the data.
        variance_draws: samples per worker used to estimate gradient variances
            of the non-quadratic tasks.
    """
    if kind not in TASK_KINDS:
        raise DomainError(f"unknown task kind {kind!r}")
    if dim < 1:
        raise DomainError("dimension must be >= 1")
    if n_workers < 2:
        raise DomainError("a task needs at least two workers")
    sizes = _shard_sizes(shard_sizes, n_workers)
    if weights is None:
        weights = np.full(n_workers, 1.0 / n_workers)
    weights = np.asarray(weights, dtype=float)
    rng = np.random.default_rng(seed)

    if kind == "quadratic":
        shards = []
        for k, n in enumerate(sizes):
            centre = rng.normal(scale=heterogeneity, size=dim)
            shards.append(DataShard(k, centre + rng.normal(scale=spread, size=(n, dim))))
        means = np.array([s.x.mean(axis=0) for s in shards])
        optimum = weights @ means
        task = Task(
            kind, dim, shards, 1.0, clip_bound, 0.0, 0.0, weights, np.zeros(dim), optimum=optimum
        )
        task.optimal_value = loss(task, optimum)
        # Gradient deviations are w-independent for this objective.
        task.grad_var = max(float(np.mean(np.sum((s.x - s.x.mean(axis=0)) ** 2, axis=1))) for s in shards)
        task.worker_var = float(weights @ np.sum((means - optimum) ** 2, axis=1))
        return task

    teacher = rng.normal(size=dim) / math.sqrt(dim)
    shards = []
    for k, n in enumerate(sizes):
        shift = rng.normal(scale=heterogeneity / math.sqrt(dim), size=dim)
        x = shift + rng.normal(scale=spread, size=(n, dim))
        if kind == "logistic":
            y = np.where(x @ teacher + 0.5 * rng.normal(size=n) >= 0, 1.0, -1.0)
        else:
            y = np.tanh(x @ teacher) + 0.1 * rng.normal(size=n)
        shards.append(DataShard(k, x, y))

    if kind == "logistic":
        model_dim = dim
        initial = np.zeros(dim)
        lip = max(float(np.max(np.sum(s.x**2, axis=1))) for s in shards) / 4.0
        lip_source = "exact"
    else:
        model_dim = MLP_HIDDEN * dim + 2 * MLP_HIDDEN + 1
        initial = rng.normal(scale=0.5, size=model_dim)
        lip = 0.0
        lip_source = "estimated"
    task = Task(
        kind, model_dim, shards, 1.0 if lip == 0.0 else lip, clip_bound, 0.0, 0.0, weights, initial,
        variance_source="estimated", lipschitz_source=lip_source, input_dim=dim,
    )
    if kind == "mlp":
        task.lipschitz_grad = _estimate_lipschitz(task, rng)

    # Plug-in variance estimates at the initial model from at most `variance_draws`
    # samples per worker.
    sub = []
    for s in shards:
        idx = rng.choice(s.size, size=min(s.size, variance_draws), replace=False)
        sub.append(DataShard(s.worker_id, s.x[idx], s.y[idx]))
    probe = Task(kind, model_dim, sub, task.lipschitz_grad, clip_bound, 0.0, 0.0, weights, initial,
                 input_dim=dim)
    task.grad_var, task.worker_var = _gradient_variances(probe, [initial])
    return task
