"""Exception types shared across the assimilation toolkit."""


class AssimilationError(Exception):
    """Base class for all toolkit errors."""


class EmptyEnsemble(AssimilationError):
    """An operation that needs at least one member got an empty ensemble."""


class InsufficientMembers(AssimilationError):
    """Covariance estimation requires at least two ensemble members."""


class UnsupportedKind(AssimilationError):
    """A covariance operation got a representation it cannot handle."""


class InvalidWeight(AssimilationError):
    """Blend weight outside [0, 1]."""


class NotPositiveDefinite(AssimilationError):
    """Cholesky factorization failed even after jitter escalation."""


class Diverged(AssimilationError):
    """A trajectory produced non-finite values."""


class NonContiguousWindows(AssimilationError):
    """Sequential windows must satisfy tF of one = t0 of the next."""
