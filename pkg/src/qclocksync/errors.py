"""Exception hierarchy shared by all simulator modules."""


class QcsError(Exception):
    """Base class for all simulator errors."""


class NonUnitaryError(QcsError):
    """A user-supplied matrix failed the unitarity check."""


class ImpossibleBranchError(QcsError):
    """A measurement draw selected a branch with (numerically) zero probability."""


class ProtocolOrderError(QcsError):
    """An operation was attempted out of lifecycle order (e.g. re-collapsing a pair)."""


class BudgetError(QcsError):
    """A sampling schedule does not fit in the remaining un-consumed pairs."""


class EstimationError(QcsError):
    """A fit could not be performed on the given series."""


class RankDeficientError(EstimationError):
    """The least-squares design matrix is rank deficient (e.g. all times identical)."""


class InconclusiveError(QcsError):
    """The run produced no usable answer (distinct from a hard failure)."""


class ConfigError(QcsError):
    """A scenario configuration violates a load-time constraint."""
