"""
Boosted Decay Lab - Error Types
Every failure carries the process exit code the runner reports for it
"""

from typing import Optional


class LabError(Exception):
    """Base class for all laboratory failures."""

    exit_code = 1


class ConfigurationError(LabError):
    """Invalid configuration, grid parameters or a basis too large for dense work."""

    exit_code = 2


class DomainError(LabError, ValueError):
    """Argument outside the physical domain (|v| >= 1, m <= 0, off-grid momentum)."""


class NumericError(LabError):
    """Linear-algebra failure; carries the dimension of the offending matrix."""

    def __init__(self, message: str, dim: Optional[int] = None):
        if dim is not None:
            message = f"{message} (dim={dim})"
        super().__init__(message)
        self.dim = dim


class ConstructionError(NumericError):
    """Hermiticity defect too large to be roundoff."""


class IllConditionedError(NumericError):
    """Gram matrix of a projection basis is numerically singular."""


class FitError(LabError):
    """No usable exponential window or a fit below the quality bar."""
