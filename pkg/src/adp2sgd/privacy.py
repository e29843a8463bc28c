"""Renyi-DP accounting for noisy, subsampled gradient steps.

Pipeline: per-step Gaussian mechanism on a clipped mean gradient (sensitivity
``2G/B``), amplified by sampling ``B`` of ``K * n1`` records without replacement,
composed over ``T`` steps at one fixed order ``alpha`` and converted to
``(eps, delta)``-DP.  :func:`calibrate_sigma` inverts that chain for a target budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CompositionError, DomainError, InfeasibleBudgetError, OutOfRegimeError

NOISE_FLOOR = 1.5
REL_TOL = 1e-12


@dataclass(frozen=True)
class RdpCurvePoint:
    alpha: float
    eps_rdp: float

    def __post_init__(self):
        if not self.alpha > 1:
            raise DomainError(f"RDP order must exceed 1, got {self.alpha!r}")
        if not self.eps_rdp >= 0:
            raise DomainError(f"RDP epsilon must be non-negative, got {self.eps_rdp!r}")


def gaussian_rdp(alpha: float, delta2: float, sigma2: float) -> RdpCurvePoint:
    """RDP of the Gaussian mechanism: ``alpha * delta2^2 / (2 sigma2)``."""
    if not alpha > 1:
        raise DomainError(f"alpha must exceed 1, got {alpha!r}")
    if not delta2 > 0 or not sigma2 > 0:
        raise DomainError("sensitivity and noise variance must be positive")
    return RdpCurvePoint(alpha, alpha * delta2**2 / (2.0 * sigma2))


def subsampled_regime(alpha: float, gamma: float, delta2: float, sigma2: float):
    """Both validity conditions of the subsampled bound as ``(name, lhs, rhs, ok)``."""
    ratio = sigma2 / delta2**2
    limit = math.log(1.0 / (gamma * (1.0 + ratio)))
    return [
        ("sigma2/delta2^2 >= 1.5", ratio, NOISE_FLOOR, ratio >= NOISE_FLOOR),
        ("alpha <= log(1/(gamma(1+sigma2/delta2^2)))", alpha, limit, alpha <= limit),
    ]


def subsampled_gaussian_rdp(alpha: float, gamma: float, delta2: float, sigma2: float) -> RdpCurvePoint:
    """RDP of the Gaussian mechanism run on a uniform subsample without replacement.

    Returns ``5 gamma^2 alpha delta2^2 / sigma2``. The bound only holds when
    ``sigma2 / delta2^2 >= 1.5`` and ``alpha <= log(1 / (gamma (1 + sigma2/delta2^2)))``;
    outside that region :class:`OutOfRegimeError` is raised.
    """
    if not alpha > 1:
        raise DomainError(f"alpha must exceed 1, got {alpha!r}")
    if not 0 < gamma <= 1:
        raise DomainError(f"subsample rate must lie in (0, 1], got {gamma!r}")
    if not delta2 > 0 or not sigma2 > 0:
        raise DomainError("sensitivity and noise variance must be positive")
    for name, lhs, rhs, ok in subsampled_regime(alpha, gamma, delta2, sigma2):
        if not ok:
            raise OutOfRegimeError(f"subsampled Gaussian bound invalid: {name} fails ({lhs:.6g} vs {rhs:.6g})")
    return RdpCurvePoint(alpha, 5.0 * gamma**2 * alpha * delta2**2 / sigma2)


def compose(points) -> RdpCurvePoint:
    """Sequential composition at a common order: the RDP epsilons add up.

    An empty composition is free and is reported at order ``inf``.
    """
    points = list(points)
    if not points:
        return RdpCurvePoint(math.inf, 0.0)
    alpha = points[0].alpha
    for p in points[1:]:
        if not math.isclose(p.alpha, alpha, rel_tol=REL_TOL):
            raise CompositionError(f"cannot compose orders {alpha!r} and {p.alpha!r}")
    return RdpCurvePoint(alpha, math.fsum(p.eps_rdp for p in points))


def rdp_to_dp(point: RdpCurvePoint, delta: float) -> float:
    """``eps_rdp + log(1/delta) / (alpha - 1)``."""
    if not 0 < delta <= 1:
        raise DomainError(f"delta must lie in (0, 1], got {delta!r}")
    if not point.alpha > 1:
        raise DomainError("alpha must exceed 1")
    if math.isinf(point.alpha):
        return point.eps_rdp
    return point.eps_rdp + math.log(1.0 / delta) / (point.alpha - 1.0)


@dataclass(frozen=True)
class FeasibilityCheck:
    name: str
    lhs: float
    relation: str
    rhs: float

    @property
    def ok(self) -> bool:
        return self.lhs <= self.rhs if self.relation == "<=" else self.lhs >= self.rhs

    def __str__(self):
        return f"{self.name}: {self.lhs:.6g} {self.relation} {self.rhs:.6g}"


@dataclass(frozen=True)
class PrivacyParams:
    eps: float
    delta: float
    mu: float
    alpha: float
    sigma2: float
    gamma: float
    delta2: float
    G: float
    B: int
    T: int
    K: int
    n1: int

    @property
    def noise_ratio(self) -> float:
        return self.sigma2 / self.delta2**2

    @property
    def step_rdp(self) -> float:
        """Per-step RDP cost ``20 G^2 alpha / (K^2 n1^2 sigma2)``."""
        return 20.0 * self.G**2 * self.alpha / (self.K**2 * self.n1**2 * self.sigma2)

    def checks(self) -> list[FeasibilityCheck]:
        return feasibility_checks(self)

    @property
    def feasible(self) -> bool:
        return all(c.ok for c in self.checks())


def feasibility_checks(p: PrivacyParams) -> list[FeasibilityCheck]:
    Kn = p.K * p.n1
    log_ratio = math.log(
        Kn**3 * p.mu * p.eps / (Kn**2 * p.mu * p.eps * p.B + 5.0 * p.T * p.alpha * p.B**3)
    )
    return [
        FeasibilityCheck("noise floor sigma2/delta2^2", p.noise_ratio, ">=", NOISE_FLOOR),
        FeasibilityCheck("alpha log-ratio bound", p.alpha, "<=", log_ratio),
        FeasibilityCheck(
            "eps ceiling", p.eps, "<=", 10.0 * p.B**2 * p.T * p.alpha / (3.0 * Kn**2 * p.mu)
        ),
    ]


def _check_budget_args(eps, delta, K, n1, B, T, G):
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps!r}")
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta!r}")
    for name, v in (("K", K), ("n1", n1), ("B", B), ("T", T)):
        if int(v) != v or v < 1:
            raise DomainError(f"{name} must be a positive integer, got {v!r}")
    if not G > 0 or not math.isfinite(G):
        raise DomainError(f"clip bound G must be positive and finite, got {G!r}")
    if B > n1:
        raise DomainError(f"batch size {B} exceeds smallest shard {n1}")


def calibrate_sigma(eps, delta, mu, K, n1, B, T, G) -> PrivacyParams:
    """Noise variance that makes ``T`` noisy steps ``(eps, delta)``-DP.

    Splits the budget as ``mu * eps`` for the composed RDP cost and
    ``(1 - mu) * eps`` for the conversion term, which fixes
    ``alpha = log(1/delta) / ((1 - mu) eps) + 1`` and
    ``sigma2 = 20 G^2 T alpha / (K^2 n1^2 mu eps)``.

    Raises:
        InfeasibleBudgetError: when any feasibility condition fails; the message
            names each failed inequality with both sides.
    """
    _check_budget_args(eps, delta, K, n1, B, T, G)
    if not 0 < mu < 1:
        raise DomainError(f"mu must lie in (0, 1), got {mu!r}")
    alpha = math.log(1.0 / delta) / ((1.0 - mu) * eps) + 1.0
    sigma2 = 20.0 * G**2 * T * alpha / (K**2 * n1**2 * mu * eps)
    params = PrivacyParams(
        eps=eps, delta=delta, mu=mu, alpha=alpha, sigma2=sigma2,
        gamma=B / (K * n1), delta2=2.0 * G / B, G=G, B=int(B), T=int(T), K=int(K), n1=int(n1),
    )
    failed = [c for c in params.checks() if not c.ok]
    if failed:
        raise InfeasibleBudgetError(
            f"infeasible budget at mu={mu:g}: " + "; ".join(f"{c} violated" for c in failed),
            failed, mu,
        )
    return params


def find_mu(eps, delta, K, n1, B, T, G, grid: int = 99) -> PrivacyParams:
    """Grid search over ``mu`` in ``(0, 1)`` for the feasible calibration with least noise.

    The grid is ``i / (grid + 1)`` for ``i = 1..grid``. If no point is feasible the
    raised error reports the point with the smallest total violation.
    """
    if int(grid) != grid or grid < 10:
        raise DomainError(f"grid resolution must be an integer >= 10, got {grid!r}")
    _check_budget_args(eps, delta, K, n1, B, T, G)
    best, closest = None, None
    for i in range(1, grid + 1):
        mu = i / (grid + 1)
        try:
            p = calibrate_sigma(eps, delta, mu, K, n1, B, T, G)
        except InfeasibleBudgetError as err:
            miss = sum(abs(c.lhs - c.rhs) / max(abs(c.rhs), 1e-300) for c in err.failed)
            if closest is None or miss < closest[0]:
                closest = (miss, err)
            continue
        if best is None or p.sigma2 < best.sigma2:
            best = p
    if best is None:
        err = closest[1]
        raise InfeasibleBudgetError(
            f"no feasible mu on a {grid}-point grid; closest {err}", err.failed, err.mu
        )
    return best


def per_iteration_epsilon(t: int, params: PrivacyParams) -> float:
    """Budget spent by the model released after ``t`` of ``T`` steps: ``sqrt(t/T) eps``."""
    if not 0 <= t <= params.T:
        raise DomainError(f"iteration {t} outside [0, {params.T}]")
    return math.sqrt(t / params.T) * params.eps


def add_noise(g: np.ndarray, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """``g + n`` with ``n ~ N(0, sigma2 I)``."""
    if not sigma2 >= 0:
        raise DomainError(f"noise variance must be non-negative, got {sigma2!r}")
    g = np.asarray(g, dtype=float)
    if sigma2 == 0:
        return g.copy()
    return g + rng.normal(scale=math.sqrt(sigma2), size=g.shape)


@dataclass
class SpendLedger:
    """Running RDP spend at one order; single writer, read through :meth:`snapshot`."""

    alpha: float
    records: list[tuple[int, float]] = field(default_factory=list)

    def record(self, t: int, point: RdpCurvePoint) -> None:
        if not math.isclose(point.alpha, self.alpha, rel_tol=REL_TOL):
            raise CompositionError(f"ledger order {self.alpha!r} != {point.alpha!r}")
        self.records.append((t, point.eps_rdp))

    @property
    def total(self) -> float:
        return math.fsum(e for _, e in self.records)

    def snapshot(self) -> RdpCurvePoint:
        return RdpCurvePoint(self.alpha, self.total) if self.records else compose([])

    def epsilon(self, delta: float) -> float:
        return rdp_to_dp(self.snapshot(), delta)


def accountant_epsilon(params: PrivacyParams, steps: int | None = None) -> float:
    """Run the RDP chain for ``steps`` (default ``T``) steps at the calibrated order."""
    steps = params.T if steps is None else steps
    step = subsampled_gaussian_rdp(params.alpha, params.gamma, params.delta2, params.sigma2)
    return rdp_to_dp(RdpCurvePoint(params.alpha, steps * step.eps_rdp), params.delta)
