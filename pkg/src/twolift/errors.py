"""Exception types shared across the package."""


class TwoLiftError(Exception):
    """Base class for all package errors."""


class IsolatedVertex(TwoLiftError):
    pass


class SameSide(TwoLiftError):
    pass


class DimensionMismatch(TwoLiftError):
    pass


class NotMixing(TwoLiftError):
    pass


class InfeasiblePath(TwoLiftError):
    pass


class OutOfBudget(TwoLiftError):
    pass


class DegenerateTrace(TwoLiftError):
    pass


class InsufficientSamples(TwoLiftError):
    pass


class TooLargeForExact(TwoLiftError):
    pass


class ZeroAlpha(TwoLiftError):
    pass


class NotStationary(TwoLiftError):
    pass


class TruncationExhausted(TwoLiftError):
    pass


class ConfigError(TwoLiftError):
    pass
