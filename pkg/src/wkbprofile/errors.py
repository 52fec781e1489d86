"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class WKBError(Exception):
    """Base class for all package errors."""


class SingularNormalMatrix(WKBError):
    pass


class NonFiniteCoefficient(WKBError):
    pass


class DimensionMismatch(WKBError):
    pass


class EigenvalueCollision(WKBError):
    pass


class ComplexSpectrum(WKBError):
    pass


class NearCharacteristicAmbiguity(WKBError):
    pass


class DegenerateBranch(WKBError):
    pass


class GlancingBranch(WKBError):
    pass


class GlancingFrequency(WKBError):
    pass


class DefectiveElliptic(WKBError):
    pass


class IllConditioned(WKBError):
    pass


class NotASymmetrizer(WKBError):
    pass


class ZeroVector(WKBError):
    pass


class GlancingOnLattice(WKBError):
    def __init__(self, message: str, direction: tuple[int, ...] | None = None):
        super().__init__(message)
        self.direction = direction


class NullProjectedPolarization(WKBError):
    pass


class PartitionClosureViolation(WKBError):
    pass


class CFLViolation(WKBError):
    pass


class PicardDivergence(WKBError):
    pass


class ShockProximity(WKBError):
    pass


class UnboundedCoupling(WKBError):
    pass


class NoContraction(WKBError):
    pass


class GridMismatch(WKBError):
    pass


class InvalidForcing(WKBError):
    pass


class EpsilonTooSmallForGrid(WKBError):
    pass


class ParameterOutOfRange(WKBError):
    pass


class ExactGlancing(WKBError):
    pass


class ZeroFrequency(WKBError):
    pass


class ConfigParse(WKBError):
    pass
