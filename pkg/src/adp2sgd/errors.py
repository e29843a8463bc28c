"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class Adp2Error(Exception):
    """Base class for errors raised by this package."""


class DomainError(Adp2Error, ValueError):
    """An argument lies outside the domain of a formula or operation."""


class InvalidBatchError(DomainError):
    pass


class TopologyError(Adp2Error, ValueError):
    """Graph construction or gossip sampling failed."""


class OutOfRegimeError(DomainError):
    """An RDP bound was queried outside the region where it is valid."""


class CompositionError(DomainError):
    pass


class InfeasibleBudgetError(Adp2Error):
    """No noise level satisfies the privacy calibration constraints.

    ``failed`` holds the violated :class:`~adp2sgd.privacy.FeasibilityCheck` rows,
    ``mu`` the split parameter that produced them.
    """

    def __init__(self, message: str, failed=(), mu: float | None = None):
        super().__init__(message)
        self.failed = tuple(failed)
        self.mu = mu


class StalenessGuardError(Adp2Error):
    pass


class ConfigError(Adp2Error, ValueError):
    """Configuration failed validation; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class TraceSchemaError(Adp2Error):
    pass


class EmptyTraceError(Adp2Error):
    pass
