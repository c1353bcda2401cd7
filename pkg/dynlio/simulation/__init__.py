"""Deterministic lidar/IMU scene simulator with per-point ground truth."""

from .generator import LabeledFrame, SimulatedDataset, generate_sequence
from .scene import Box, Mover, Plane, SceneSpec, raycast
from .sensors import EgoTrajectory, ImuModel, LidarModel, Segment

__all__ = [
    "Box",
    "EgoTrajectory",
    "ImuModel",
    "LabeledFrame",
    "LidarModel",
    "Mover",
    "Plane",
    "SceneSpec",
    "Segment",
    "SimulatedDataset",
    "generate_sequence",
    "raycast",
]
