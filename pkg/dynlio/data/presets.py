"""Scenario and lidar presets.

The three scenario presets mirror the usual benchmark split: a
geometrically rich room, a geometrically degenerate corridor and an open
lot dominated by moving objects. The sensor sits 1.75 m above the ground.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from dynlio.core.geometry import Pose
from dynlio.simulation.scene import Box, Mover, Plane, SceneSpec
from dynlio.simulation.sensors import EgoTrajectory, ImuModel, LidarModel, drive

GROUND_Z = -1.75
# Movers float slightly above the ground so their clusters stay clear of it
MOVER_CLEARANCE = 0.35

LIDAR_PRESETS: dict[str, LidarModel] = {
    "vlp16": LidarModel(16, -15.0, 15.0, 0.4, 0.1, 100.0, 0.5, 0.01),
    "hdl32": LidarModel(32, -30.67, 10.67, 0.4, 0.1, 100.0, 0.5, 0.015),
    "os1-64": LidarModel(64, -16.6, 16.6, 0.703125, 0.1, 120.0, 0.5, 0.01),
}

DEFAULT_IMU = ImuModel(
    rate=200.0,
    gyro_noise=1e-3,
    accel_noise=1e-2,
    gyro_bias=(2e-4, -1e-4, 3e-4),
    accel_bias=(5e-3, -5e-3, 1e-2),
)


@dataclass(frozen=True, eq=False)
class ScenarioPreset:
    """Everything needed to simulate one named scenario."""

    name: str
    description: str
    scene: SceneSpec
    ego: EgoTrajectory
    imu: ImuModel
    duration: float


def _mover_box(
    mover_id: int,
    center_xy: tuple[float, float],
    size: tuple[float, float, float],
    velocity: tuple[float, float],
    yaw: float = 0.0,
) -> Mover:
    sx, sy, sz = size
    bottom = GROUND_Z + MOVER_CLEARANCE
    box = Box.from_bounds(
        (center_xy[0] - sx / 2, center_xy[1] - sy / 2, bottom),
        (center_xy[0] + sx / 2, center_xy[1] + sy / 2, bottom + sz),
        yaw=yaw,
    )
    return Mover(box, (velocity[0], velocity[1], 0.0), (0.0, 0.0, 0.0), mover_id)


def _jitter(movers: list[Mover], seed: int) -> list[Mover]:
    """Shift start positions by up to 1 m and speeds by up to 10 % per seed."""
    rng = np.random.default_rng([int(seed), 0x5343])
    out = []
    for m in movers:
        shift = np.append(rng.uniform(-1.0, 1.0, 2), 0.0)
        scale = rng.uniform(0.9, 1.1)
        box = m.primitive
        moved = Box(box.half_extents, Pose(box.pose.quat, box.pose.translation + shift))
        out.append(Mover(moved, m.velocity * scale, m.angular_velocity, m.mover_id))
    return out


def _ground() -> Plane:
    return Plane.from_point_normal((0.0, 0.0, GROUND_Z), (0.0, 0.0, 1.0))


def _rich(seed: int, movers: bool) -> ScenarioPreset:
    room = Box.from_bounds((-12.0, -12.0, GROUND_Z), (32.0, 12.0, 4.25))
    pillars = [
        Box.from_bounds((x - 0.4, y - 0.4, GROUND_Z), (x + 0.4, y + 0.4, 4.25))
        for x, y in [(6, 5), (6, -5), (14, 5), (14, -5), (22, 5), (22, -5), (2, -8), (-4, 6)]
    ]
    crates = [
        Box.from_bounds((9.0, -2.8, GROUND_Z), (10.5, -1.6, -0.75), yaw=0.3),
        Box.from_bounds((16.0, 1.8, GROUND_Z), (17.2, 3.0, -0.25), yaw=-0.5),
        Box.from_bounds((-3.0, -4.0, GROUND_Z), (-1.5, -2.5, -0.95), yaw=0.8),
        Box.from_bounds((26.0, -1.0, GROUND_Z), (28.0, 1.0, 0.25)),
    ]
    mover_list = [
        _mover_box(1, (8.0, 4.0), (0.8, 0.8, 1.8), (0.6, -0.6)),
        _mover_box(2, (18.0, -8.0), (0.8, 0.8, 1.8), (0.5, 0.4)),
    ]
    ego = drive([(1.0, 0.0, 0.0), (2.0, 0.5, 0.0), (3.0, 0.0, 0.0), (3.0, 0.0, 0.4),
                 (4.0, 0.0, 0.0)])
    return ScenarioPreset(
        "rich",
        "Closed room with pillars and crates, two pedestrians",
        SceneSpec((room, *pillars, *crates), tuple(_jitter(mover_list, seed)) if movers else ()),
        ego,
        DEFAULT_IMU,
        12.0,
    )


def _corridor(seed: int, movers: bool) -> ScenarioPreset:
    walls = [
        Plane.from_point_normal((80.0, side * 2.5, 0.5), (0.0, -side, 0.0), half_size=(100.0, 2.25))
        for side in (1.0, -1.0)
    ]
    recesses = [
        Box.from_bounds((x, side * 2.5 - 0.3, GROUND_Z), (x + 0.6, side * 2.5 + 0.3, 2.75))
        for x in (8.0, 23.0, 38.0) for side in (1.0, -1.0)
    ]
    mover_list = [
        _mover_box(1, (25.0, 1.3), (1.0, 0.8, 1.8), (-0.8, 0.05)),
        _mover_box(2, (32.0, -1.3), (1.0, 0.8, 1.8), (-0.7, -0.05)),
    ]
    ego = drive([(1.0, 0.0, 0.0), (2.0, 0.6, 0.0), (10.0, 0.0, 0.0)])
    return ScenarioPreset(
        "degenerate-corridor",
        "Long corridor of two parallel walls, weakly constrained along its axis",
        SceneSpec((_ground(), *walls, *recesses),
                  tuple(_jitter(mover_list, seed)) if movers else ()),
        ego,
        DEFAULT_IMU,
        12.0,
    )


def _mover_dominated(seed: int, movers: bool) -> ScenarioPreset:
    posts = [
        Box.from_bounds((x - 0.15, y - 0.15, GROUND_Z), (x + 0.15, y + 0.15, 2.25))
        for x in (-16.0, -8.0, 0.0, 8.0, 16.0, 24.0, 32.0) for y in (-10.0, 10.0)
    ]
    # Yawed 45 degrees so both visible faces move along their normals
    yaw = np.pi / 4
    size = (2.0, 1.0, 2.0)
    mover_list = [
        _mover_box(1, (4.0, -3.0), size, (1.2, 0.0), yaw),
        _mover_box(2, (12.0, -3.0), size, (1.2, 0.0), yaw),
        _mover_box(3, (-2.0, 3.0), size, (0.9, 0.0), yaw),
        _mover_box(4, (8.0, 3.0), size, (0.9, 0.0), yaw),
        _mover_box(5, (20.0, -6.0), size, (-1.0, 0.0), yaw),
        _mover_box(6, (30.0, -6.0), size, (-1.0, 0.0), yaw),
        _mover_box(7, (0.0, 6.0), size, (1.3, 0.0), yaw),
        _mover_box(8, (16.0, 6.0), size, (1.3, 0.0), yaw),
    ]
    ego = drive([(1.0, 0.0, 0.0), (2.0, 0.5, 0.0), (9.0, 0.0, 0.0)])
    return ScenarioPreset(
        "mover-dominated",
        "Open lot with sparse posts and eight vehicles around the sensor",
        SceneSpec((_ground(), *posts), tuple(_jitter(mover_list, seed)) if movers else ()),
        ego,
        DEFAULT_IMU,
        12.0,
    )


_BUILDERS: dict[str, Callable[[int, bool], ScenarioPreset]] = {
    "rich": _rich,
    "degenerate-corridor": _corridor,
    "mover-dominated": _mover_dominated,
}


def list_presets() -> list[str]:
    """Names of the scenario presets."""
    return list(_BUILDERS)


def list_lidar_presets() -> list[str]:
    """Names of the lidar presets."""
    return list(LIDAR_PRESETS)


def get_preset(name: str, seed: int = 0, movers: bool = True) -> ScenarioPreset:
    """Build a scenario preset.

    Args:
        name: One of :func:`list_presets`
        seed: Varies mover start positions and speeds
        movers: Whether to include the moving objects

    Raises:
        ValueError: If the preset is unknown
    """
    try:
        builder = _BUILDERS[name]
    except KeyError:
        msg = f"Unknown preset {name!r}; available: {', '.join(_BUILDERS)}"
        raise ValueError(msg) from None
    return builder(seed, movers)


def get_lidar(name: str) -> LidarModel:
    """Look up a lidar preset by name."""
    try:
        return LIDAR_PRESETS[name]
    except KeyError:
        msg = f"Unknown lidar {name!r}; available: {', '.join(LIDAR_PRESETS)}"
        raise ValueError(msg) from None
