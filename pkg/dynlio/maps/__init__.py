"""Temporal window map and voxel maps."""

from .temporal import TemporalWindowMap
from .voxel import PlaneVoxel, PlaneVoxelMap, StaticVoxelRecord, VoxelKey, fit_plane

__all__ = [
    "PlaneVoxel",
    "PlaneVoxelMap",
    "StaticVoxelRecord",
    "TemporalWindowMap",
    "VoxelKey",
    "fit_plane",
]
