"""Sensor models and the analytic ego trajectory."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, NamedTuple, Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial.transform import Rotation

from dynlio.core.geometry import Pose, as_vec3
from dynlio.odometry.preprocessing import GRAVITY, ImuMeasurements


@dataclass(frozen=True)
class LidarModel:
    """Spinning multi-ring lidar.

    A sweep fires every ring at each azimuth step; a point's timestamp is
    ``scan_start + azimuth_fraction * scan_period`` with the fraction in [0, 1).

    Attributes:
        n_rings: Number of laser rings
        fov_down: Lowest ring elevation in degrees
        fov_up: Highest ring elevation in degrees
        horizontal_resolution: Azimuth step in degrees
        scan_period: Sweep duration in seconds
        max_range: Farthest return in meters
        min_range: Nearest return in meters
        range_noise: Gaussian range noise sigma in meters
    """

    n_rings: int = 16
    fov_down: float = -15.0
    fov_up: float = 15.0
    horizontal_resolution: float = 0.4
    scan_period: float = 0.1
    max_range: float = 100.0
    min_range: float = 0.5
    range_noise: float = 0.01

    def __post_init__(self) -> None:
        if self.n_rings < 1:
            msg = f"n_rings must be >= 1, got {self.n_rings}"
            raise ValueError(msg)
        if self.fov_up < self.fov_down or (self.n_rings > 1 and self.fov_up == self.fov_down):
            msg = f"Vertical field of view [{self.fov_down}, {self.fov_up}] is empty"
            raise ValueError(msg)
        for name in ("horizontal_resolution", "scan_period", "max_range"):
            if getattr(self, name) <= 0:
                msg = f"{name} must be positive, got {getattr(self, name)}"
                raise ValueError(msg)
        if self.range_noise < 0 or self.min_range < 0:
            msg = "range_noise and min_range must be non-negative"
            raise ValueError(msg)

    @property
    def n_azimuths(self) -> int:
        return int(round(360.0 / self.horizontal_resolution))

    def ray_pattern(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sensor-frame beam layout in firing order.

        Returns:
            Tuple of (unit directions (N, 3), azimuth fractions (N,), rings (N,))
        """
        elevations = np.deg2rad(np.linspace(self.fov_down, self.fov_up, self.n_rings))
        n_az = self.n_azimuths
        fractions = np.arange(n_az) / n_az
        azimuths = 2 * np.pi * fractions
        az, el = np.meshgrid(azimuths, elevations, indexing="ij")
        dirs = np.stack(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1
        ).reshape(-1, 3)
        frac = np.repeat(fractions, self.n_rings)
        rings = np.tile(np.arange(self.n_rings, dtype=np.uint16), n_az)
        return dirs, frac, rings

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class ImuModel:
    """IMU rate, white noise and constant biases."""

    rate: float = 200.0
    gyro_noise: float = 1e-3
    accel_noise: float = 1e-2
    gyro_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    accel_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.rate <= 0:
            msg = f"IMU rate must be positive, got {self.rate}"
            raise ValueError(msg)
        if self.gyro_noise < 0 or self.accel_noise < 0:
            msg = "IMU noise must be non-negative"
            raise ValueError(msg)
        object.__setattr__(self, "gyro_bias", tuple(float(b) for b in self.gyro_bias))
        object.__setattr__(self, "accel_bias", tuple(float(b) for b in self.accel_bias))

    def to_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}


class Segment(NamedTuple):
    """One piece of planar ego motion.

    ``accel`` is the forward acceleration (m/s^2) and ``yaw_rate`` the turn
    rate (rad/s); a segment may not do both at once.
    """

    duration: float
    accel: float = 0.0
    yaw_rate: float = 0.0


class _Knot(NamedTuple):
    time: float
    position: np.ndarray
    yaw: float
    speed: float


@dataclass(frozen=True, eq=False)
class EgoTrajectory:
    """Planar piecewise trajectory of straight (constant acceleration) and
    constant-speed turning segments at a fixed height.

    Before t=0 and after the last segment the platform keeps its boundary
    motion (rest before, constant velocity after).
    """

    segments: tuple[Segment, ...]
    start: np.ndarray = field(default_factory=lambda: np.zeros(3))
    start_yaw: float = 0.0
    start_speed: float = 0.0

    def __post_init__(self) -> None:
        segs = tuple(Segment(*s) for s in self.segments)
        for seg in segs:
            if seg.duration <= 0:
                msg = f"Segment duration must be positive, got {seg.duration}"
                raise ValueError(msg)
            if seg.accel and seg.yaw_rate:
                msg = "A segment cannot accelerate and turn at once"
                raise ValueError(msg)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "start", as_vec3(self.start, "start"))
        knots = [_Knot(0.0, self.start, float(self.start_yaw), float(self.start_speed))]
        for seg in segs:
            k = knots[-1]
            pos, yaw, speed = self._advance(k, seg, seg.duration)
            if speed < -1e-9:
                msg = "Segments drive the speed negative"
                raise ValueError(msg)
            knots.append(_Knot(k.time + seg.duration, pos, float(yaw), float(speed)))
        object.__setattr__(self, "_knots", knots)

    @property
    def duration(self) -> float:
        return self._knots[-1].time  # type: ignore[attr-defined]

    @staticmethod
    def _advance(k: _Knot, seg: Segment, tau: np.ndarray | float):
        tau = np.asarray(tau, dtype=float)
        if seg.yaw_rate:
            w = seg.yaw_rate
            yaw = k.yaw + w * tau
            dx = k.speed / w * (np.sin(yaw) - np.sin(k.yaw))
            dy = -k.speed / w * (np.cos(yaw) - np.cos(k.yaw))
            speed = np.full_like(tau, k.speed)
        else:
            yaw = np.full_like(tau, k.yaw)
            dist = k.speed * tau + 0.5 * seg.accel * tau**2
            dx, dy = dist * np.cos(k.yaw), dist * np.sin(k.yaw)
            speed = k.speed + seg.accel * tau
        pos = k.position + np.stack([dx, dy, np.zeros_like(dx)], axis=-1)
        return pos, yaw, speed

    def _locate(self, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        knots = self._knots  # type: ignore[attr-defined]
        starts = np.array([k.time for k in knots[:-1]])
        idx = np.clip(np.searchsorted(starts, times, side="right") - 1, 0, len(starts) - 1)
        return idx, times - starts[idx]

    def kinematics(self, times: ArrayLike) -> dict[str, np.ndarray]:
        """Position, yaw, world velocity, world acceleration and yaw rate at times."""
        t = np.asarray(times, dtype=float).reshape(-1)
        n = t.shape[0]
        pos = np.empty((n, 3))
        yaw = np.empty(n)
        vel = np.zeros((n, 3))
        acc = np.zeros((n, 3))
        rate = np.zeros(n)
        knots = self._knots  # type: ignore[attr-defined]
        if not self.segments:
            pos[:] = self.start
            yaw[:] = self.start_yaw
            return {"position": pos, "yaw": yaw, "velocity": vel, "acceleration": acc,
                    "yaw_rate": rate}

        before = t < 0
        after = t > self.duration
        seg_idx, tau = self._locate(np.clip(t, 0.0, self.duration))
        for i, seg in enumerate(self.segments):
            sel = (seg_idx == i) & ~before & ~after
            if not np.any(sel):
                continue
            k = knots[i]
            p, y, s = self._advance(k, seg, tau[sel])
            pos[sel], yaw[sel] = p, y
            heading = np.stack([np.cos(y), np.sin(y), np.zeros_like(y)], axis=-1)
            left = np.stack([-np.sin(y), np.cos(y), np.zeros_like(y)], axis=-1)
            vel[sel] = heading * s[:, None]
            acc[sel] = heading * seg.accel + left * (s * seg.yaw_rate)[:, None]
            rate[sel] = seg.yaw_rate

        first, last = knots[0], knots[-1]
        pos[before] = first.position + np.outer(t[before], self._velocity_of(first))
        yaw[before] = first.yaw
        vel[before] = self._velocity_of(first)
        pos[after] = last.position + np.outer(t[after] - last.time, self._velocity_of(last))
        yaw[after] = last.yaw
        vel[after] = self._velocity_of(last)
        return {"position": pos, "yaw": yaw, "velocity": vel, "acceleration": acc,
                "yaw_rate": rate}

    @staticmethod
    def _velocity_of(k: _Knot) -> np.ndarray:
        return k.speed * np.array([np.cos(k.yaw), np.sin(k.yaw), 0.0])

    def rotations(self, times: ArrayLike) -> Rotation:
        yaw = self.kinematics(times)["yaw"]
        return Rotation.from_euler("z", yaw)

    def pose(self, t: float) -> Pose:
        kin = self.kinematics([t])
        return Pose.from_rotvec([0.0, 0.0, kin["yaw"][0]], kin["position"][0])

    def poses(self, times: ArrayLike) -> tuple[Rotation, np.ndarray]:
        """Vectorized world-from-body rotations and positions."""
        kin = self.kinematics(times)
        return Rotation.from_euler("z", kin["yaw"]), kin["position"]

    def synthesize_imu(
        self,
        model: ImuModel,
        t_end: float,
        seed: int,
        gravity: ArrayLike = GRAVITY,
    ) -> ImuMeasurements:
        """IMU readings on [0, t_end] from the analytic derivatives plus noise and bias."""
        n = int(np.floor(t_end * model.rate + 1e-9)) + 1
        times = np.arange(n) / model.rate
        kin = self.kinematics(times)
        rot = Rotation.from_euler("z", kin["yaw"])
        specific = rot.inv().apply(kin["acceleration"] - as_vec3(gravity, "gravity"))
        gyro = np.zeros((n, 3))
        gyro[:, 2] = kin["yaw_rate"]
        rng = np.random.default_rng([int(seed), 0x494D55])
        gyro += np.asarray(model.gyro_bias) + rng.normal(0.0, model.gyro_noise, (n, 3))
        accel = specific + np.asarray(model.accel_bias) + rng.normal(0.0, model.accel_noise, (n, 3))
        return ImuMeasurements(times, gyro, accel)

    def to_dict(self) -> dict[str, Any]:
        return {
            "segments": [list(s) for s in self.segments],
            "start": self.start.tolist(),
            "start_yaw": self.start_yaw,
            "start_speed": self.start_speed,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EgoTrajectory:
        return cls(
            tuple(Segment(*s) for s in data.get("segments", [])),
            data.get("start", (0.0, 0.0, 0.0)),
            float(data.get("start_yaw", 0.0)),
            float(data.get("start_speed", 0.0)),
        )


def stationary(duration: float) -> EgoTrajectory:
    """Trajectory that rests at the origin for ``duration`` seconds."""
    return EgoTrajectory((Segment(duration),))


def drive(segments: Sequence[tuple[float, float, float]], start_yaw: float = 0.0) -> EgoTrajectory:
    """Trajectory from (duration, accel, yaw_rate) triples starting at rest at the origin."""
    return EgoTrajectory(tuple(Segment(*s) for s in segments), start_yaw=start_yaw)
