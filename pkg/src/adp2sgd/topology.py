"""Communication graphs, pairwise gossip matrices and spectral-gap estimates."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError, TopologyError

EIG_TOL = 1e-10


@dataclass(frozen=True)
class CommGraph:
    """Undirected worker graph, optionally split into senders and receivers.

    When a partition is given, every edge joins a sender to a receiver, which keeps
    pairwise exchanges deadlock-free on a ring.
    """

    n_workers: int
    edges: frozenset
    senders: frozenset | None = None
    receivers: frozenset | None = None

    def __post_init__(self):
        K = self.n_workers
        if K < 2:
            raise TopologyError("a graph needs at least two workers")
        norm = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j or not (0 <= i < K and 0 <= j < K):
                raise TopologyError(f"invalid edge ({i}, {j}) for {K} workers")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))
        if (self.senders is None) != (self.receivers is None):
            raise TopologyError("senders and receivers must be given together")
        if self.senders is not None:
            s, r = frozenset(self.senders), frozenset(self.receivers)
            if s & r or (s | r) != frozenset(range(K)):
                raise TopologyError("senders and receivers must partition the workers")
            for i, j in norm:
                if not ((i in s and j in r) or (i in r and j in s)):
                    raise TopologyError(f"edge ({i}, {j}) does not join a sender to a receiver")
            object.__setattr__(self, "senders", s)
            object.__setattr__(self, "receivers", r)
        if not self._connected():
            raise TopologyError("graph is not connected")

    def _connected(self) -> bool:
        seen, stack = {0}, [0]
        while stack:
            for j in self.neighbors(stack.pop()):
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.n_workers

    @cached_property
    def _adjacency(self) -> tuple[tuple[int, ...], ...]:
        adj = [[] for _ in range(self.n_workers)]
        for i, j in sorted(self.edges):
            adj[i].append(j)
            adj[j].append(i)
        return tuple(tuple(sorted(a)) for a in adj)

    def neighbors(self, k: int) -> tuple[int, ...]:
        return self._adjacency[k]


def ring_partition(n_workers: int) -> CommGraph:
    """Ring over ``0..K-1`` with even workers sending and odd workers receiving."""
    K = n_workers
    if K < 2 or K % 2:
        raise TopologyError(f"ring partition needs an even number of workers >= 2, got {K}")
    edges = {(i, (i + 1) % K) for i in range(K)}
    return CommGraph(K, frozenset(edges), frozenset(range(0, K, 2)), frozenset(range(1, K, 2)))


def full_bipartite(n_workers: int) -> CommGraph:
    """Every even worker linked to every odd worker."""
    K = n_workers
    if K < 2 or K % 2:
        raise TopologyError(f"bipartite graph needs an even number of workers >= 2, got {K}")
    senders, receivers = range(0, K, 2), range(1, K, 2)
    edges = {(i, j) for i in senders for j in receivers}
    return CommGraph(K, frozenset(edges), frozenset(senders), frozenset(receivers))


def complete_graph(n_workers: int) -> CommGraph:
    K = n_workers
    return CommGraph(K, frozenset((i, j) for i in range(K) for j in range(i + 1, K)))


@dataclass(frozen=True, eq=False)
class GossipMatrix:
    entries: np.ndarray
    pair: tuple[int, int]


def pairwise_matrix(n_workers: int, i: int, j: int) -> GossipMatrix:
    A = np.eye(n_workers)
    A[i, i] = A[j, j] = A[i, j] = A[j, i] = 0.5
    return GossipMatrix(A, (i, j))


def sample_partner(graph: CommGraph, worker: int, rng: np.random.Generator) -> int:
    nbrs = graph.neighbors(worker)
    if not nbrs:
        raise TopologyError(f"worker {worker} has no neighbours")
    return nbrs[rng.integers(len(nbrs))]


def sample_gossip_matrix(graph: CommGraph, worker: int, rng: np.random.Generator) -> GossipMatrix:
    """Pair ``worker`` with a uniformly chosen neighbour and return the averaging matrix.

    On a partitioned graph a sender therefore picks one of its receivers, and a
    receiver is paired with one of its senders.
    """
    j = sample_partner(graph, worker, rng)
    return pairwise_matrix(graph.n_workers, worker, j)


def apply_averaging(models: np.ndarray, A: GossipMatrix) -> np.ndarray:
    """Return the models after mixing with ``A``.

    ``models`` stores one model per row, so the new row ``j`` is
    ``sum_i A[i, j] * models[i]``.
    """
    models = np.asarray(models, dtype=float)
    E = A.entries
    if models.ndim != 2 or E.shape != (len(models), len(models)):
        raise DomainError(f"cannot mix {models.shape} models with a {E.shape} matrix")
    return E.T @ models


def average_pair(models: np.ndarray, i: int, j: int) -> None:
    """In-place pairwise averaging of rows ``i`` and ``j``."""
    mid = 0.5 * (models[i] + models[j])
    models[i] = mid
    models[j] = mid


def pair_distribution(graph: CommGraph, activation=None) -> dict[tuple[int, int], float]:
    """Probability of each coupled pair when a worker is activated with ``activation``
    (uniform by default) and paired with a uniform neighbour."""
    K = graph.n_workers
    p = np.full(K, 1.0 / K) if activation is None else np.asarray(activation, dtype=float)
    dist: dict[tuple[int, int], float] = {}
    for i, j in sorted(graph.edges):
        dist[(i, j)] = p[i] / len(graph.neighbors(i)) + p[j] / len(graph.neighbors(j))
    return dist


@dataclass(frozen=True)
class SpectralEstimate:
    rho: float
    rho_bar: float
    n_samples: int | str
    eigenvalues: tuple[float, ...] = ()


def rho_bar(n_workers: int, rho: float) -> float:
    """Mixing constant ``(K-1)/K * (1/(1-rho) + 2 sqrt(rho) / (1 - sqrt(rho))^2)``."""
    K = n_workers
    if K < 2:
        raise DomainError("rho_bar needs K >= 2")
    if not 0.0 <= rho < 1.0 - 1e-9:
        raise DomainError(f"rho must lie in [0, 1), got {rho!r}")
    s = math.sqrt(rho)
    return (K - 1) / K * (1.0 / (1.0 - rho) + 2.0 * s / (1.0 - s) ** 2)


def _second_moment(n_workers: int, weights: dict[tuple[int, int], float]) -> np.ndarray:
    M = np.zeros((n_workers, n_workers))
    for (i, j), w in weights.items():
        A = pairwise_matrix(n_workers, i, j).entries
        M += w * (A.T @ A)
    return M


def estimate_spectral_gap(
    graph: CommGraph, mode: str = "exact", n_samples: int = 100_000, rng=None
) -> SpectralEstimate:
    """Second-largest eigenvalue magnitude of ``E[A^T A]`` for the gossip sampler.

    ``mode="exact"`` enumerates every pair the sampler can produce;
    ``mode="monte_carlo"`` averages ``n_samples`` sampled matrices.
    """
    K = graph.n_workers
    if mode == "exact":
        M = _second_moment(K, pair_distribution(graph))
        label: int | str = "exact"
    elif mode == "monte_carlo":
        if n_samples < 1:
            raise DomainError("n_samples must be positive")
        rng = np.random.default_rng() if rng is None else rng
        active = rng.integers(K, size=n_samples)
        counts: Counter = Counter()
        # Group by active worker so partner draws stay vectorised.
        for k in range(K):
            nbrs = graph.neighbors(k)
            n_k = int(np.sum(active == k))
            if n_k == 0:
                continue
            if not nbrs:
                raise TopologyError(f"worker {k} has no neighbours")
            picks = np.bincount(rng.integers(len(nbrs), size=n_k), minlength=len(nbrs))
            for j, c in zip(nbrs, picks):
                counts[(min(k, j), max(k, j))] += int(c)
        M = _second_moment(K, {e: c / n_samples for e, c in counts.items()})
        label = n_samples
    else:
        raise DomainError(f"unknown spectral mode {mode!r}")

    if not np.all(np.isfinite(M)):
        raise np.linalg.LinAlgError("non-finite second-moment matrix")
    lam = np.sort(np.linalg.eigvalsh(M))[::-1]
    rho = float(max(abs(lam[1]), abs(lam[-1])))
    if rho < EIG_TOL:
        rho = 0.0
    if rho >= 1.0 - 1e-9:
        raise TopologyError(f"rho = {rho!r}: the gossip pattern does not mix (disconnected?)")
    return SpectralEstimate(rho, rho_bar(K, rho), label, tuple(float(x) for x in lam))
