"""Input preprocessing: IMU propagation, scan undistortion and downsampling.

IMU readings are treated as constant over each sample interval at the mean
of the two bracketing samples, and that constant-rate motion is integrated
in closed form. Propagating in two legs therefore matches one-leg
propagation regardless of where the split falls.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial.transform import Rotation, Slerp

from dynlio.core.errors import CoverageError
from dynlio.core.geometry import Pose, StampedPoint, as_points, as_vec3, skew, stack_stamped
from dynlio.core.utils import pack_keys, validate_positive, voxel_keys

logger = logging.getLogger(__name__)

GRAVITY = np.array([0.0, 0.0, -9.81])
DEFAULT_MAX_IMU_GAP = 0.05
_SMALL_ANGLE = 1e-6


class ImuSample(NamedTuple):
    """One IMU reading in the body frame.

    Attributes:
        time: Seconds
        angular_velocity: rad/s
        linear_acceleration: Specific force in m/s^2 (a level, resting IMU
            reads +9.81 on z)
    """

    time: float
    angular_velocity: np.ndarray
    linear_acceleration: np.ndarray


@dataclass(frozen=True, eq=False)
class ImuMeasurements:
    """Column-wise IMU stream: times (N,), gyro (N, 3) and accel (N, 3)."""

    times: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float).reshape(-1)
        gyro = np.asarray(self.gyro, dtype=float).reshape(-1, 3)
        accel = np.asarray(self.accel, dtype=float).reshape(-1, 3)
        if not (times.shape[0] == gyro.shape[0] == accel.shape[0]):
            msg = "IMU times, gyro and accel must have the same length"
            raise ValueError(msg)
        if np.any(np.diff(times) < 0):
            msg = "IMU samples must be in nondecreasing time order"
            raise ValueError(msg)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "gyro", gyro)
        object.__setattr__(self, "accel", accel)

    @classmethod
    def from_samples(cls, samples: Sequence[ImuSample]) -> ImuMeasurements:
        if not samples:
            return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))
        return cls(
            np.array([s.time for s in samples]),
            np.array([s.angular_velocity for s in samples]),
            np.array([s.linear_acceleration for s in samples]),
        )

    def __len__(self) -> int:
        return int(self.times.shape[0])

    def samples(self) -> list[ImuSample]:
        return [ImuSample(float(t), g, a) for t, g, a in zip(self.times, self.gyro, self.accel)]

    def between(self, t0: float, t1: float) -> ImuMeasurements:
        """Samples with t0 <= time <= t1."""
        keep = (self.times >= t0) & (self.times <= t1)
        return ImuMeasurements(self.times[keep], self.gyro[keep], self.accel[keep])


@dataclass(frozen=True, eq=False)
class NavState:
    """Navigation state: world-from-body pose, world velocity and IMU biases."""

    pose: Pose = field(default_factory=Pose)
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    time: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "velocity", as_vec3(self.velocity, "velocity"))
        object.__setattr__(self, "gyro_bias", as_vec3(self.gyro_bias, "gyro_bias"))
        object.__setattr__(self, "accel_bias", as_vec3(self.accel_bias, "accel_bias"))
        if not np.isfinite(self.time):
            msg = f"NavState time must be finite, got {self.time}"
            raise ValueError(msg)
        object.__setattr__(self, "time", float(self.time))

    def with_pose(self, pose: Pose) -> NavState:
        return replace(self, pose=pose)

    def retract(self, delta: ArrayLike) -> NavState:
        """Apply a 9-vector (rotation, translation, velocity) increment."""
        d = np.asarray(delta, dtype=float).reshape(9)
        return replace(self, pose=self.pose.retract(d[:6]), velocity=self.velocity + d[6:])


@dataclass(frozen=True, eq=False)
class RawScan:
    """One lidar sweep in the sensor frame with per-point timestamps.

    Attributes:
        points: (N, 3) sensor-frame positions
        times: (N,) absolute acquisition times, nondecreasing
        scan_start: Sweep start time
        scan_end: Sweep end time
        rings: Optional (N,) laser ring index of each point
    """

    points: np.ndarray
    times: np.ndarray
    scan_start: float
    scan_end: float
    rings: np.ndarray | None = None

    def __post_init__(self) -> None:
        pts = as_points(self.points)
        times = np.asarray(self.times, dtype=float).reshape(-1)
        if times.shape[0] != pts.shape[0]:
            msg = f"Scan has {pts.shape[0]} points but {times.shape[0]} times"
            raise ValueError(msg)
        if self.scan_end < self.scan_start:
            msg = f"scan_end {self.scan_end} precedes scan_start {self.scan_start}"
            raise ValueError(msg)
        if np.any(np.diff(times) < 0):
            msg = "Scan point times must be nondecreasing in storage order"
            raise ValueError(msg)
        if times.size and (times[0] < self.scan_start - 1e-9 or times[-1] > self.scan_end + 1e-9):
            msg = "Scan point times must lie within [scan_start, scan_end]"
            raise ValueError(msg)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "times", times)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def to_stamped(self) -> list[StampedPoint]:
        return [StampedPoint(p, float(t)) for p, t in zip(self.points, self.times)]


def _exp_integrals(omega: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form Exp(omega s) and its single and double integrals over [0, tau]."""
    w = float(np.linalg.norm(omega))
    eye = np.eye(3)
    if w * tau < _SMALL_ANGLE:
        k = skew(omega)
        k2 = k @ k
        rot = eye + k * tau + 0.5 * k2 * tau**2
        first = eye * tau + 0.5 * k * tau**2 + k2 * tau**3 / 6
        second = 0.5 * eye * tau**2 + k * tau**3 / 6 + k2 * tau**4 / 24
        return rot, first, second
    k = skew(omega / w)
    k2 = k @ k
    wt = w * tau
    s, c = np.sin(wt), np.cos(wt)
    rot = eye + s * k + (1 - c) * k2
    first = eye * tau + (1 - c) / w * k + (tau - s / w) * k2
    second = 0.5 * eye * tau**2 + (tau / w - s / w**2) * k + (0.5 * tau**2 - (1 - c) / w**2) * k2
    return rot, first, second


def _step(
    state: NavState, omega: np.ndarray, accel: np.ndarray, tau: float, gravity: np.ndarray
) -> NavState:
    r0 = state.pose.rotation_matrix
    exp_rot, first, second = _exp_integrals(omega, tau)
    velocity = state.velocity + gravity * tau + r0 @ first @ accel
    position = (
        state.pose.translation + state.velocity * tau + 0.5 * gravity * tau**2
        + r0 @ second @ accel
    )
    rotation = Rotation.from_matrix(r0 @ exp_rot)
    return replace(
        state,
        pose=Pose.from_rotation(rotation, position),
        velocity=velocity,
        time=state.time + tau,
    )


def check_imu_coverage(
    imu: ImuMeasurements, t0: float, t1: float, max_imu_gap: float = DEFAULT_MAX_IMU_GAP
) -> None:
    """Raise CoverageError unless samples cover [t0, t1] with no gap above max_imu_gap."""
    if len(imu) == 0:
        msg = f"No IMU samples to cover [{t0:.6f}, {t1:.6f}]"
        raise CoverageError(msg)
    times = imu.times
    inner = times[(times > t0) & (times < t1)]
    knots = np.concatenate([[t0], inner, [t1]])
    gaps = np.diff(knots)
    near_start = np.min(np.abs(times - t0))
    near_end = np.min(np.abs(times - t1))
    worst = max(float(gaps.max()) if gaps.size else 0.0, near_start, near_end)
    if worst > max_imu_gap + 1e-12:
        msg = (
            f"IMU gap of {worst:.4f} s exceeds max_imu_gap={max_imu_gap} s "
            f"while propagating [{t0:.6f}, {t1:.6f}]"
        )
        raise CoverageError(msg)


def propagate(
    state: NavState,
    imu: ImuMeasurements | Sequence[ImuSample],
    until: float,
    gravity: ArrayLike = GRAVITY,
    max_imu_gap: float = DEFAULT_MAX_IMU_GAP,
) -> tuple[NavState, list[NavState]]:
    """Propagate a state through an IMU stream.

    Args:
        state: State at the start time ``state.time``
        imu: Samples covering [state.time, until]
        until: Target time, >= state.time
        gravity: World gravity vector
        max_imu_gap: Largest tolerated spacing between samples (seconds)

    Returns:
        Tuple of (prior state at ``until``, states at the start, at every
        sample time strictly inside the interval and at ``until``)

    Raises:
        CoverageError: If the stream does not cover the interval
    """
    if not isinstance(imu, ImuMeasurements):
        imu = ImuMeasurements.from_samples(list(imu))
    t0 = state.time
    until = float(until)
    if until < t0:
        msg = f"Cannot propagate backwards from {t0} to {until}"
        raise ValueError(msg)
    check_imu_coverage(imu, t0, until, max_imu_gap)
    g = as_vec3(gravity, "gravity")

    times = imu.times
    inner = times[(times > t0) & (times < until)]
    knots = np.unique(np.concatenate([[t0], inner, [until]]))
    trajectory = [state]
    current = state
    for a, b in zip(knots[:-1], knots[1:]):
        mid = 0.5 * (a + b)
        # Interval constants: mean of the samples bracketing [a, b]
        hi = int(np.clip(np.searchsorted(times, mid), 1, len(times) - 1)) if len(times) > 1 else 0
        lo = max(hi - 1, 0)
        omega = 0.5 * (imu.gyro[lo] + imu.gyro[hi]) - state.gyro_bias
        accel = 0.5 * (imu.accel[lo] + imu.accel[hi]) - state.accel_bias
        current = _step(current, omega, accel, float(b - a), g)
        current = replace(current, time=float(b))
        trajectory.append(current)
    return current, trajectory


def _trajectory_interpolator(trajectory: Sequence[NavState]):
    times = np.array([s.time for s in trajectory])
    keep = np.ones(times.shape[0], dtype=bool)
    keep[1:] = np.diff(times) > 0
    states = [s for s, k in zip(trajectory, keep) if k]
    times = times[keep]
    translations = np.array([s.pose.translation for s in states])
    rotations = Rotation.from_quat(np.array([s.pose.quat for s in states]))
    slerp = Slerp(times, rotations) if times.shape[0] > 1 else None

    def interpolate(query: np.ndarray) -> tuple[Rotation, np.ndarray]:
        if query.size and (query.min() < times[0] - 1e-9 or query.max() > times[-1] + 1e-9):
            msg = (
                f"Times [{query.min():.6f}, {query.max():.6f}] fall outside the "
                f"trajectory span [{times[0]:.6f}, {times[-1]:.6f}]"
            )
            raise CoverageError(msg)
        q = np.clip(query, times[0], times[-1])
        if slerp is None:
            rot = Rotation.from_quat(np.repeat(states[0].pose.quat[None], q.shape[0], axis=0))
            return rot, np.repeat(translations[:1], q.shape[0], axis=0)
        trans = np.column_stack([np.interp(q, times, translations[:, i]) for i in range(3)])
        return slerp(q), trans

    return interpolate


def interpolate_poses(trajectory: Sequence[NavState], times: ArrayLike) -> list[Pose]:
    """World-from-body poses at arbitrary times (slerp rotation, linear translation)."""
    q = np.asarray(times, dtype=float).reshape(-1)
    rot, trans = _trajectory_interpolator(trajectory)(q)
    return [Pose.from_rotation(rot[i], trans[i]) for i in range(q.shape[0])]


def undistort(
    scan: RawScan, trajectory: Sequence[NavState], extrinsic: Pose | None = None
) -> np.ndarray:
    """Transform every scan point to the world frame with the pose at its own time.

    Args:
        scan: Raw sweep in the lidar frame
        trajectory: States spanning [scan_start, scan_end]
        extrinsic: Body-from-lidar transform; identity when None

    Returns:
        (N, 3) world-frame positions; point times are ``scan.times``

    Raises:
        CoverageError: If a point time is outside the trajectory span
    """
    if not trajectory:
        msg = "Undistortion needs a non-empty trajectory"
        raise CoverageError(msg)
    body = scan.points if extrinsic is None else extrinsic.apply(scan.points)
    if len(scan) == 0:
        return np.zeros((0, 3))
    rot, trans = _trajectory_interpolator(trajectory)(scan.times)
    return rot.apply(body) + trans


def deskew_to_scan_end(
    scan: RawScan,
    trajectory: Sequence[NavState],
    extrinsic: Pose | None = None,
    end_pose: Pose | None = None,
) -> np.ndarray:
    """Undistorted points expressed in the body frame at scan end.

    Args:
        scan: Raw sweep in the lidar frame
        trajectory: States spanning the sweep
        extrinsic: Body-from-lidar transform; identity when None
        end_pose: World-from-body pose at scan end; interpolated when None

    Returns:
        (N, 3) positions p_end with world = end_pose * p_end
    """
    world = undistort(scan, trajectory, extrinsic)
    if end_pose is None:
        end_pose = interpolate_poses(trajectory, [scan.scan_end])[0]
    return end_pose.inverse().apply(world)


def voxel_downsample_indices(positions: ArrayLike, cell: float) -> np.ndarray:
    """Indices of one representative point per occupied voxel.

    The representative is the real point nearest its voxel's centroid (lowest
    index on ties). Returned indices are sorted ascending.
    """
    cell = validate_positive(cell, "cell")
    pts = as_points(positions)
    n = pts.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    codes = pack_keys(voxel_keys(pts, cell))
    _, inverse, counts = np.unique(codes, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((counts.shape[0], 3))
    np.add.at(sums, inverse, pts)
    centroids = sums / counts[:, None]
    dist2 = np.sum((pts - centroids[inverse]) ** 2, axis=1)
    order = np.lexsort((np.arange(n), dist2, inverse))
    first = np.ones(n, dtype=bool)
    first[1:] = inverse[order][1:] != inverse[order][:-1]
    return np.sort(order[first])


def voxel_downsample(
    points: Sequence[StampedPoint] | ArrayLike, cell: float, times: ArrayLike | None = None
) -> list[StampedPoint]:
    """Voxel-grid downsampling that keeps real measured points and their times."""
    if times is None:
        positions, point_times = stack_stamped(list(points))  # type: ignore[arg-type]
    else:
        positions = as_points(points)
        point_times = np.asarray(times, dtype=float).reshape(-1)
    idx = voxel_downsample_indices(positions, cell)
    return [StampedPoint(positions[i].copy(), float(point_times[i])) for i in idx]


def _level_rotation(accel_mean: np.ndarray) -> Rotation:
    """Smallest rotation taking the measured specific-force direction to +z."""
    up = np.array([0.0, 0.0, 1.0])
    a = accel_mean / np.linalg.norm(accel_mean)
    axis = np.cross(a, up)
    sin = np.linalg.norm(axis)
    cos = float(np.clip(a @ up, -1.0, 1.0))
    if sin < 1e-12:
        return Rotation.identity() if cos > 0 else Rotation.from_rotvec([np.pi, 0.0, 0.0])
    return Rotation.from_rotvec(axis / sin * np.arctan2(sin, cos))


def gravity_aligned_state(
    imu: ImuMeasurements, t0: float, t1: float, gravity: ArrayLike = GRAVITY
) -> NavState:
    """Initial state at t0 with roll and pitch from the mean accelerometer reading.

    Assumes the platform rests over [t0, t1]. Yaw, position and velocity are zero.

    Raises:
        CoverageError: If no samples fall in the interval
    """
    window = imu.between(t0, t1)
    if len(window) == 0:
        msg = f"No IMU samples in [{t0}, {t1}] for gravity alignment"
        raise CoverageError(msg)
    mean = window.accel.mean(axis=0)
    g_norm = float(np.linalg.norm(as_vec3(gravity, "gravity")))
    if abs(np.linalg.norm(mean) - g_norm) > 0.1 * g_norm:
        logger.warning(
            "Mean specific force %.3f m/s^2 differs from gravity %.3f; platform may be moving",
            np.linalg.norm(mean), g_norm,
        )
    rotation = _level_rotation(mean)
    return NavState(pose=Pose.from_rotation(rotation), time=float(t0))
