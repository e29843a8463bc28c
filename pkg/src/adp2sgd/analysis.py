"""Closed-form convergence constants and trace-based convergence metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tasks
from .errors import DomainError, InfeasibleBudgetError
from .privacy import PrivacyParams, calibrate_sigma
from .topology import rho_bar as _rho_bar


@dataclass(frozen=True)
class TheoremConstants:
    C1: float
    C2: float
    C3: float
    rho_bar: float
    C4: float | None = None
    T_min: float | None = None
    utility_rhs: float | None = None
    priv_T: float | None = None
    priv_utility_rhs: float | None = None

    @property
    def c1_positive(self) -> bool:
        return self.C1 > 0

    @property
    def c2_nonnegative(self) -> bool:
        return self.C2 >= 0

    @property
    def c3_at_most_one(self) -> bool:
        return self.C3 <= 1

    @property
    def admissible(self) -> bool:
        return self.c1_positive and self.c2_nonnegative and self.c3_at_most_one

    def as_dict(self) -> dict:
        out = asdict(self)
        out.update(c1_positive=self.c1_positive, c2_nonnegative=self.c2_nonnegative,
                   c3_at_most_one=self.c3_at_most_one)
        return out


def theorem1_constants(eta: float, B: int, L: float, tau: float, K: int, rho: float) -> TheoremConstants:
    """Evaluate ``C1``, ``C2``, ``C3`` and ``rho_bar`` for a learning rate and topology."""
    if not (eta > 0 and B > 0 and L > 0 and tau >= 0 and K >= 2):
        raise DomainError("need eta, B, L > 0, tau >= 0 and K >= 2")
    rb = _rho_bar(K, rho)
    eBL = eta * B * L
    mix = tau * (K - 1) / K + rb
    C1 = 1.0 - 24.0 * eBL**2 * mix
    C3 = 0.5 + eBL * tau**2 / K + (6 * eBL**2 + eta * K * B * L + 12 * eBL**3 * tau**2 / K) * 2 * rb / C1
    C2 = (
        -(eta * B * L**2 / K + 6 * eta**2 * B**2 * L**3 / K**2 + 12 * eta**3 * B**3 * L**4 * tau**2 / K**3)
        * 4 * eta**2 * B**2 * mix / C1
        + eta * B / (2 * K)
        - eta**2 * B**2 * L / K**2
        - 2 * eta**3 * B**3 * L**2 * tau**2 / K**3
    )
    return TheoremConstants(C1, C2, C3, rb)


def proposition1_branches(L: float, K: int, tau: float, rho: float) -> tuple[float, float, float, float]:
    """The four terms inside the max of the iteration threshold (before the ``L^2 K^2`` factor)."""
    rb = _rho_bar(K, rho)
    return (
        192.0 * (tau * (K - 1) / K + rb),
        1024.0 * K**2 * rb**2,
        64.0 * tau**2 / K**2,
        (K - 1) ** 0.5 / K ** (1 / 6) * (8 * math.sqrt(6) * tau ** (2 / 3) + 8) ** 2
        * (tau + rb * K / (K - 1)) ** (2 / 3),
    )


def proposition1_threshold(L: float, K: int, tau: float, rho: float) -> float:
    """Smallest ``T`` for which the ``O(1/sqrt(T))`` rate with ``eta = K/(B sqrt(T))`` holds."""
    if tau < 0 or not L > 0:
        raise DomainError("need L > 0 and tau >= 0")
    return L**2 * K**2 * max(proposition1_branches(L, K, tau, rho))


def prop1_learning_rate(K: int, B: int, T: int) -> float:
    return K / (B * math.sqrt(T))


def proposition1_bound(F0_minus_Fstar, L, grad_var, worker_var, d, sigma2, B, T) -> float:
    """Right-hand side of the averaged squared-gradient-norm bound."""
    if T < 1:
        raise DomainError("T must be >= 1")
    return (2 * F0_minus_Fstar + 2 * L * (grad_var / B + 6 * worker_var + d * sigma2 / B**2)) / math.sqrt(T)


@dataclass(frozen=True)
class Proposition2:
    priv_T: float
    C4: float
    priv_utility_rhs: float
    feasible: bool
    privacy: PrivacyParams | None = None
    reason: str = ""


def proposition2_package(F0_minus_Fstar, L, grad_var, worker_var, B, mu, K, n1, eps, delta, d, G) -> Proposition2:
    """Iteration count, ``C4`` and utility bound of the private algorithm.

    The privacy feasibility of the resulting ``T`` (rounded up) is checked with
    :func:`~adp2sgd.privacy.calibrate_sigma` and reported in ``feasible``.
    """
    if not 0 < mu < 1:
        raise DomainError(f"mu must lie in (0, 1), got {mu!r}")
    budget = F0_minus_Fstar + L * (grad_var / B + 6 * worker_var)
    log_inv_delta = math.log(1.0 / delta)
    T = 2 * budget * K**2 * n1**2 * eps**2 / (40 * d * L * G**2 * log_inv_delta)
    C4 = 4 * math.sqrt(5) * (1 + 1 / (B**2 * mu * (1 - mu)))
    rhs = C4 * G * math.sqrt(d * L * budget * log_inv_delta) / (K * n1 * eps)
    try:
        params = calibrate_sigma(eps, delta, mu, K, n1, B, max(1, math.ceil(T)), G)
    except (InfeasibleBudgetError, DomainError) as err:
        return Proposition2(T, C4, rhs, False, None, str(err))
    return Proposition2(T, C4, rhs, True, params)


@dataclass
class ConvergenceReport:
    iterations: list[int] = field(default_factory=list)
    grad_norm_sq: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    running_mean: list[float] = field(default_factory=list)
    bound: float | None = None
    bound_holds: bool | None = None

    @property
    def mean_grad_norm_sq(self) -> float:
        return self.running_mean[-1]

    def as_dict(self) -> dict:
        return asdict(self)


def convergence_report(trace, task: tasks.Task, probe_stride: int = 1, bound: float | None = None) -> ConvergenceReport:
    """Re-evaluate ``F`` and ``||grad F||^2`` at the averaged model of every recorded probe.

    Only probes at multiples of ``probe_stride`` (and the final one) are used.
    When ``bound`` is given, the report states whether the measured running mean
    stays at or below it.
    """
    if probe_stride <= 0:
        raise DomainError("probe stride must be positive")
    if not trace.probes:
        raise DomainError("trace holds no probes")
    report = ConvergenceReport()
    last = trace.probes[-1][0]
    total = 0.0
    for t, theta in trace.probes:
        if t % probe_stride and t != last:
            continue
        g = tasks.full_gradient(task, theta)
        gn = float(g @ g)
        total += gn
        report.iterations.append(int(t))
        report.grad_norm_sq.append(gn)
        report.loss.append(tasks.loss(task, theta))
        report.running_mean.append(total / len(report.iterations))
    if bound is not None:
        report.bound = float(bound)
        report.bound_holds = report.mean_grad_norm_sq <= bound
    return report


def max_staleness(trace) -> int:
    stale = [r.staleness for r in trace.records if r.event == "gradient_ready"]
    return int(max(stale)) if stale else 0


def theta_distance(trace, task: tasks.Task) -> np.ndarray:
    """Distance of each probed averaged model to the known optimum."""
    if task.optimum is None:
        raise DomainError("task has no known optimum")
    return np.array([np.linalg.norm(theta - task.optimum) for _, theta in trace.probes])
