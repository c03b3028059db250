"""Exception types raised across the package.

Every error derives from :class:`WassregError` so callers can catch the whole
family at once; most also derive from ``ValueError`` because they signal bad
inputs rather than internal faults.
"""

from __future__ import annotations


class WassregError(Exception):
    """Base class for all package errors."""


class EmptyAtoms(WassregError, ValueError):
    pass


class NegativeWeight(WassregError, ValueError):
    pass


class WeightSumMismatch(WassregError, ValueError):
    pass


class DimensionMismatch(WassregError, ValueError):
    pass


class VariantMismatch(WassregError, ValueError):
    pass


class MarginalMismatch(WassregError, ValueError):
    pass


class ZeroVector(WassregError, ValueError):
    pass


class DomainError(WassregError, ValueError):
    pass


class UnsupportedPairing(WassregError, ValueError):
    pass


class UnsupportedExponent(WassregError, ValueError):
    pass


class WitnessNotFound(WassregError, RuntimeError):
    pass


class NoFiniteCostProbe(WassregError, ValueError):
    pass


class GridMissingAtoms(WassregError, ValueError):
    pass


class NoPerPointCertificate(WassregError, ValueError):
    pass


class EpsilonOutOfRange(WassregError, ValueError):
    pass


class AlphaOutOfRange(WassregError, ValueError):
    pass


class InfeasibleTransport(WassregError, ValueError):
    pass


class NoFiniteCostColumn(WassregError, ValueError):
    pass


class NonConvexFamily(WassregError, ValueError):
    pass


class DivergenceDetected(WassregError, RuntimeError):
    pass


class ConfigParse(WassregError, ValueError):
    pass
