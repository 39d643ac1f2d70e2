"""Exception hierarchy shared by every module."""

from __future__ import annotations


class LatticeKamError(Exception):
    """Base class for all package errors."""


class InvalidArgument(LatticeKamError, ValueError):
    pass


class InvalidControl(InvalidArgument):
    """A control value lies outside the box [-(d*lam)^-1, (d*lam)^-1]^d."""


class ModelNotTonelli(LatticeKamError):
    pass


class NumericFailure(LatticeKamError, FloatingPointError):
    pass


class CflViolation(LatticeKamError):
    """|H_p| exceeded (d*lam)^-1 at some level; carries the offending level."""

    def __init__(self, message: str, level: int, margin: float):
        super().__init__(message)
        self.level = level
        self.margin = margin


class InadmissibleStepSize(LatticeKamError):
    pass


class SlopeBoundExceeded(LatticeKamError):
    """Observed |D_x v| after a full period exceeded the slope bound r."""


class NoConvergence(LatticeKamError):
    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class FixedPointNotReached(NoConvergence):
    pass


class PropertyFailure(LatticeKamError):
    pass


class ConfigError(LatticeKamError):
    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
