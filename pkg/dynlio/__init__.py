"""
dynlio - dynamic-aware lidar-inertial odometry

Registers lidar sweeps against a temporal sliding-window map and a plane
voxel map while labeling every point Stable or Unstable from its space-time
normal, then separates genuine movers from false alarms with a spatial
consistency check. Ships a deterministic scene simulator and evaluation
tools.
"""

__version__ = "0.9.0"

from .core.cache import DatasetCache
from .core.errors import (
    AlignmentError,
    AssociationError,
    ConfigError,
    CoverageError,
    DataFormatError,
    DegenerateNeighborhoodError,
    DynlioError,
    FrameOrderError,
    RegistrationDegeneracyError,
)
from .core.geometry import Pose, SpatioTemporalNormal, StabilityLabel, StampedPoint
from .core.normals import (
    classify_stability,
    estimate_st_normal,
    predicted_temporal_component,
    spacetime_covariance,
    temporal_angle,
)
from .core.utils import clear_all_cache, get_dynlio_info, sitrep
from .data.presets import get_lidar, get_preset, list_lidar_presets, list_presets
from .evaluation.scores import MapScore, map_scores
from .evaluation.trajectory import Trajectory, associate, ate_rmse, umeyama_align
from .maps.temporal import TemporalWindowMap
from .maps.voxel import PlaneVoxelMap, StaticVoxelRecord, fit_plane
from .odometry.estimator import (
    RegistrationConfig,
    RegistrationMode,
    initialize_maps,
    register_scan,
)
from .odometry.preprocessing import NavState, RawScan, deskew_to_scan_end, propagate, undistort
from .odometry.scc import SccConfig, spatial_consistency_check, update_static_record
from .pipeline.config import PipelineConfig, load_config
from .pipeline.runner import run_bench, run_eval, run_odom, run_sim
from .simulation.generator import generate_sequence
from .simulation.scene import SceneSpec, raycast

__all__ = [
    "AlignmentError",
    "AssociationError",
    "ConfigError",
    "CoverageError",
    "DataFormatError",
    "DatasetCache",
    "DegenerateNeighborhoodError",
    "DynlioError",
    "FrameOrderError",
    "MapScore",
    "NavState",
    "PipelineConfig",
    "PlaneVoxelMap",
    "Pose",
    "RawScan",
    "RegistrationConfig",
    "RegistrationDegeneracyError",
    "RegistrationMode",
    "SccConfig",
    "SceneSpec",
    "SpatioTemporalNormal",
    "StabilityLabel",
    "StampedPoint",
    "StaticVoxelRecord",
    "TemporalWindowMap",
    "Trajectory",
    "associate",
    "ate_rmse",
    "classify_stability",
    "clear_all_cache",
    "deskew_to_scan_end",
    "estimate_st_normal",
    "fit_plane",
    "generate_sequence",
    "get_dynlio_info",
    "get_lidar",
    "get_preset",
    "initialize_maps",
    "list_lidar_presets",
    "list_presets",
    "load_config",
    "map_scores",
    "predicted_temporal_component",
    "propagate",
    "raycast",
    "register_scan",
    "run_bench",
    "run_eval",
    "run_odom",
    "run_sim",
    "sitrep",
    "spacetime_covariance",
    "spatial_consistency_check",
    "temporal_angle",
    "umeyama_align",
    "undistort",
    "update_static_record",
]
