"""Exception types raised by the vpme toolkit."""


class VPMEError(Exception):
    """Base class for all toolkit errors."""


class NonFinite(VPMEError, ValueError):
    pass


class NonZeroMean(VPMEError, ValueError):
    pass


class InvalidRadius(VPMEError, ValueError):
    pass


class NonUnitMass(VPMEError, ValueError):
    pass


class FieldSolveFailure(VPMEError, RuntimeError):
    """A field solve did not produce a usable potential."""


class NoConvergence(FieldSolveFailure):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class PotentialOverflow(FieldSolveFailure):
    """exp(U) would leave the representable range."""


class UnknownScenario(VPMEError, ValueError):
    pass


class StaleField(VPMEError, RuntimeError):
    pass


class SizeMismatch(VPMEError, ValueError):
    pass


class TooLarge(VPMEError, ValueError):
    pass


class DimensionError(VPMEError, ValueError):
    pass


class OutOfRange(VPMEError, ValueError):
    pass


class FormatError(VPMEError, ValueError):
    pass


class DimMismatch(VPMEError, ValueError):
    pass


class ConfigError(VPMEError, ValueError):
    pass
