"""Exceptions raised across the laboratory."""

from typing import Optional


class LabError(Exception):
    """Base class for every error raised by dppp_lab."""


class SpectrumViolation(LabError, ValueError):
    """Weighted kernel has an eigenvalue outside [0, 1)."""


class AsymmetryError(LabError, ValueError):
    """Kernel values are not symmetric within tolerance."""


class SeriesDivergence(LabError, ArithmeticError):
    """Trace series stopped decreasing before reaching its tolerance."""


class SizeLimit(LabError, ValueError):
    """Matrix or enumeration is larger than the configured exact-evaluation limit."""


class NegativeWeight(LabError, ValueError):
    """A rescaling function takes a negative value on some node."""


class NotInvertible(LabError, ValueError):
    """A map sends two nodes onto one."""


class UnsupportedAlpha(LabError, ValueError):
    """The requested operation is not available for this alpha."""


class NormViolation(LabError, ValueError):
    """Operator norm of alpha*K is not below one."""


class ZeroDenominator(LabError, ZeroDivisionError):
    """Janossy density of the merged configuration vanishes."""


class StepTooLarge(LabError, RuntimeError):
    """Flow integration fails its round-trip self-check."""


class ZeroDensity(LabError, ValueError):
    """Reference density vanishes where it is evaluated."""


class DegenerateDenominator(LabError, ZeroDivisionError):
    """det_alpha J of the configuration is below the determinant floor."""


class DegenerateConfiguration(LabError, ValueError):
    """The potential is infinite on this configuration."""


class ConfigError(LabError, ValueError):
    """Malformed suite or kernel configuration."""

    def __init__(
        self,
        message: str,
        field: Optional[str] = None,
        line: Optional[int] = None,
        column: Optional[int] = None,
    ):
        self.field = field
        self.line = line
        self.column = column
        location = []
        if line is not None:
            location.append(f"line {line}")
        if column is not None:
            location.append(f"column {column}")
        if field is not None:
            location.append(f"field '{field}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
