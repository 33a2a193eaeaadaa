"""Exception types shared across the package."""


class ChainserveError(Exception):
    """Base class for domain errors raised by this package."""


class InfeasibleError(ChainserveError):
    """A composition request cannot be satisfied with the given resources."""

    def __init__(self, message: str, best_rate: float | None = None):
        super().__init__(message)
        self.best_rate = best_rate


class UnstableError(ChainserveError):
    """The offered load is at or above the total service rate."""


class OracleLimitError(ChainserveError):
    """An oracle refused an instance larger than its enumeration limits."""
