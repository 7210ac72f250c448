"""Exception types raised across the package."""


class DpmixError(Exception):
    """Base class for all package errors."""


class AsymmetricCovariance(DpmixError, ValueError):
    pass


class NotPositiveDefinite(DpmixError, ValueError):
    pass


class DimensionMismatch(DpmixError, ValueError):
    pass


class SingularTransform(DpmixError, ValueError):
    pass


class InvalidMixture(DpmixError, ValueError):
    pass


class InvalidRadii(DpmixError, ValueError):
    pass


class InfeasibleBudget(DpmixError, RuntimeError):
    pass


class InsufficientData(DpmixError, ValueError):
    """Raised when a routine needs more points than it was given."""

    def __init__(self, required: int, available: int, what: str = "points"):
        self.required = int(required)
        self.available = int(available)
        super().__init__(f"need at least {self.required} {what}, got {self.available}")


class MetricMismatch(DpmixError, ValueError):
    pass


class EmptyTable(DpmixError, ValueError):
    pass


class EmptyCandidates(DpmixError, ValueError):
    pass


class ParameterOverflow(DpmixError, OverflowError):
    """Derived counts are too large to execute; they are only available as logs."""


class InvalidConfig(DpmixError, ValueError):
    pass


class IoFailure(DpmixError, OSError):
    def __init__(self, path, reason: str = ""):
        self.path = str(path)
        msg = f"cannot access {self.path}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class ProvenanceError(DpmixError, RuntimeError):
    """The candidate cover was built after the data was read."""
