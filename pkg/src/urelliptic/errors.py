"""Exception hierarchy shared by all modules."""


class UrellipticError(Exception):
    """Base class for every error raised by the package."""


class UnknownKind(UrellipticError, ValueError):
    pass


class ResolutionTooCoarse(UrellipticError, ValueError):
    pass


class EmptySet(UrellipticError, ValueError):
    pass


class NoCorkscrew(UrellipticError):
    pass


class PointOutsideDomain(UrellipticError, ValueError):
    pass


class DepthExceedsResolution(UrellipticError, ValueError):
    pass


class DomainTooThin(UrellipticError):
    pass


class EmptyRegion(UrellipticError):
    pass


class NotElliptic(UrellipticError, ValueError):
    pass


class SolveFailure(UrellipticError, RuntimeError):
    pass


class NonPositivityError(UrellipticError, RuntimeError):
    pass


class PoleTooClose(UrellipticError, ValueError):
    pass


class SingularMap(UrellipticError, ValueError):
    pass


class ZeroDenominator(UrellipticError, ZeroDivisionError):
    pass


class MeasureMissing(UrellipticError, KeyError):
    pass


class DepthExhausted(UrellipticError):
    pass


class SolveBudgetExceeded(UrellipticError, RuntimeError):
    pass


class LatticeMismatch(UrellipticError, ValueError):
    pass


class NotNormalized(UrellipticError, ValueError):
    pass


class RadiusTooSmall(UrellipticError, ValueError):
    pass


class DegeneratePair(UrellipticError, ValueError):
    pass


class EmptyDomain(UrellipticError, ValueError):
    pass


class FullSphere(UrellipticError, ValueError):
    pass


class ZeroSetConditionFails(UrellipticError):
    def __init__(self, message, worst_annulus=None):
        super().__init__(message)
        self.worst_annulus = worst_annulus


class EmptyIntersection(UrellipticError, ValueError):
    pass


class SolutionMissing(UrellipticError, ValueError):
    pass


class ConfigInvalid(UrellipticError, ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class PipelineStageFailure(UrellipticError, RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class CacheCorrupt(UrellipticError):
    pass
