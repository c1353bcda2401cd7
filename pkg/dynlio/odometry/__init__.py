"""IMU preprocessing, dynamic-aware registration and the spatial consistency check."""

from .estimator import RegistrationConfig, RegistrationMode, RegistrationResult, register_scan
from .preprocessing import ImuMeasurements, NavState, RawScan, propagate, undistort
from .scc import SccConfig, spatial_consistency_check

__all__ = [
    "ImuMeasurements",
    "NavState",
    "RawScan",
    "RegistrationConfig",
    "RegistrationMode",
    "RegistrationResult",
    "SccConfig",
    "propagate",
    "register_scan",
    "spatial_consistency_check",
    "undistort",
]
