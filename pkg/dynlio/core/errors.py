"""Exception hierarchy for dynlio.

Every error also subclasses the builtin a caller would naturally catch
(``ValueError`` for bad inputs, ``RuntimeError`` for numerical failure).
"""

from __future__ import annotations


class DynlioError(Exception):
    """Base class for all dynlio errors."""


class DegenerateNeighborhoodError(DynlioError, ValueError):
    """Raised when a neighborhood is too small to define a covariance."""


class FrameOrderError(DynlioError, ValueError):
    """Raised when frames are pushed out of time order."""


class CoverageError(DynlioError, ValueError):
    """Raised when IMU data or a trajectory does not span a requested time."""


class RegistrationDegeneracyError(DynlioError, RuntimeError):
    """Raised when a scan cannot be registered.

    Attributes:
        n_constraints: Number of usable point-to-plane constraints found.
    """

    def __init__(self, message: str, n_constraints: int = 0):
        super().__init__(message)
        self.n_constraints = n_constraints


class AssociationError(DynlioError, ValueError):
    """Raised when two trajectories share no time-associated samples."""


class AlignmentError(DynlioError, ValueError):
    """Raised when trajectory alignment is geometrically degenerate."""


class ConfigError(DynlioError, ValueError):
    """Raised for invalid or unknown configuration values."""


class DataFormatError(DynlioError, ValueError):
    """Raised when a dataset or result file cannot be parsed."""
