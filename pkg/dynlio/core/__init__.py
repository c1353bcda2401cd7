"""Core geometry, space-time normals and shared utilities."""

from .errors import DynlioError
from .geometry import BoundingBox, Pose, SpatioTemporalNormal, StabilityLabel, StampedPoint
from .normals import classify_stability, estimate_st_normal, spacetime_covariance

__all__ = [
    "BoundingBox",
    "DynlioError",
    "Pose",
    "SpatioTemporalNormal",
    "StabilityLabel",
    "StampedPoint",
    "classify_stability",
    "estimate_st_normal",
    "spacetime_covariance",
]
