"""Fundamental geometric types: poses, stamped points and space-time normals."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial.transform import Rotation

# Upper-triangle (row-major) index pairs of a symmetric 4x4 matrix
_SYM4_ROWS, _SYM4_COLS = np.triu_indices(4)


def as_vec3(value: ArrayLike, name: str = "vector") -> np.ndarray:
    """Convert input to a finite float64 3-vector.

    Args:
        value: Anything numpy can turn into three numbers
        name: Name used in error messages

    Returns:
        Array of shape (3,)

    Raises:
        ValueError: If the input is not three finite numbers
    """
    vec = np.asarray(value, dtype=float).reshape(-1)
    if vec.shape != (3,):
        msg = f"{name} must have 3 components, got shape {vec.shape}"
        raise ValueError(msg)
    if not np.all(np.isfinite(vec)):
        msg = f"{name} must be finite, got {vec}"
        raise ValueError(msg)
    return vec


def as_points(value: ArrayLike, name: str = "points") -> np.ndarray:
    """Convert input to an (N, 3) float64 array."""
    pts = np.asarray(value, dtype=float)
    if pts.size == 0:
        return np.zeros((0, 3))
    pts = pts.reshape(-1, 3) if pts.ndim == 1 and pts.size == 3 else pts
    if pts.ndim != 2 or pts.shape[1] != 3:
        msg = f"{name} must have shape (N, 3), got {pts.shape}"
        raise ValueError(msg)
    return pts


def skew(v: ArrayLike) -> np.ndarray:
    """Skew-symmetric matrix [v]x such that [v]x @ u == cross(v, u)."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(rotvec: ArrayLike) -> np.ndarray:
    """Rotation matrix of a rotation vector (exponential map)."""
    return Rotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix()


def so3_log(matrix: ArrayLike) -> np.ndarray:
    """Rotation vector of a rotation matrix (logarithm map)."""
    return Rotation.from_matrix(np.asarray(matrix, dtype=float)).as_rotvec()


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform stored as a unit quaternion and a translation.

    The quaternion uses scipy's scalar-last (x, y, z, w) order and is kept in
    the w >= 0 hemisphere so equal rotations have equal storage.

    Attributes:
        quat: Unit quaternion (x, y, z, w)
        translation: Translation in meters
    """

    quat: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        q = np.asarray(self.quat, dtype=float).reshape(4)
        norm = np.linalg.norm(q)
        if not np.isfinite(norm) or norm < 1e-12:
            msg = f"Invalid quaternion: {q}"
            raise ValueError(msg)
        q = q / norm
        if q[3] < 0:
            q = -q
        object.__setattr__(self, "quat", q)
        object.__setattr__(self, "translation", as_vec3(self.translation, "translation"))

    @classmethod
    def identity(cls) -> Pose:
        """Return the identity transform."""
        return cls()

    @classmethod
    def from_rotation(cls, rotation: Rotation, translation: ArrayLike = (0, 0, 0)) -> Pose:
        """Build a pose from a scipy Rotation and a translation."""
        return cls(rotation.as_quat(), np.asarray(translation, dtype=float))

    @classmethod
    def from_rotvec(cls, rotvec: ArrayLike, translation: ArrayLike = (0, 0, 0)) -> Pose:
        """Build a pose from a rotation vector and a translation."""
        return cls.from_rotation(Rotation.from_rotvec(np.asarray(rotvec, float)), translation)

    @classmethod
    def from_matrix(cls, matrix: ArrayLike) -> Pose:
        """Build a pose from a 4x4 homogeneous matrix."""
        m = np.asarray(matrix, dtype=float)
        return cls.from_rotation(Rotation.from_matrix(m[:3, :3]), m[:3, 3])

    @property
    def rotation(self) -> Rotation:
        """Rotation as a scipy Rotation."""
        return Rotation.from_quat(self.quat)

    @property
    def rotation_matrix(self) -> np.ndarray:
        """3x3 rotation matrix."""
        return self.rotation.as_matrix()

    def as_matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def compose(self, other: Pose) -> Pose:
        """Return self * other (apply ``other`` first)."""
        rot = self.rotation * other.rotation
        return Pose.from_rotation(rot, self.rotation.apply(other.translation) + self.translation)

    def __matmul__(self, other: Pose) -> Pose:
        return self.compose(other)

    def inverse(self) -> Pose:
        """Return the inverse transform."""
        inv = self.rotation.inv()
        return Pose.from_rotation(inv, -inv.apply(self.translation))

    def apply(self, points: ArrayLike) -> np.ndarray:
        """Transform points of shape (3,) or (N, 3)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation_matrix.T + self.translation

    def retract(self, delta: ArrayLike) -> Pose:
        """Apply a (rotation, translation) 6-vector increment.

        Rotation is perturbed on the right (R <- R Exp(dtheta)); translation
        is perturbed additively in the parent frame.
        """
        d = np.asarray(delta, dtype=float).reshape(6)
        rot = self.rotation * Rotation.from_rotvec(d[:3])
        return Pose.from_rotation(rot, self.translation + d[3:])

    def distance_to(self, other: Pose) -> tuple[float, float]:
        """Return (rotation angle in radians, translation distance in meters)."""
        angle = float(np.linalg.norm((self.rotation.inv() * other.rotation).as_rotvec()))
        return angle, float(np.linalg.norm(self.translation - other.translation))

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        """Check equality of two poses within a tolerance."""
        angle, dist = self.distance_to(other)
        return angle <= atol and dist <= atol

    def __repr__(self) -> str:
        return f"Pose(quat={np.round(self.quat, 6)}, translation={np.round(self.translation, 6)})"


class StampedPoint(NamedTuple):
    """A 3D position with its acquisition time in seconds."""

    position: np.ndarray
    time: float


def stack_stamped(points: list[StampedPoint]) -> tuple[np.ndarray, np.ndarray]:
    """Split a list of stamped points into (N, 3) positions and (N,) times."""
    if not points:
        return np.zeros((0, 3)), np.zeros(0)
    positions = np.array([np.asarray(p.position, dtype=float) for p in points])
    times = np.array([float(p.time) for p in points])
    if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(times))):
        msg = "Stamped points must have finite positions and times"
        raise ValueError(msg)
    return positions, times


@dataclass(frozen=True, eq=False)
class SymMat4:
    """Symmetric 4x4 matrix stored as its 10 upper-triangle entries (row-major)."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        e = np.asarray(self.entries, dtype=float).reshape(-1)
        if e.shape != (10,):
            msg = f"SymMat4 needs 10 entries, got {e.shape[0]}"
            raise ValueError(msg)
        object.__setattr__(self, "entries", e)

    @classmethod
    def from_array(cls, matrix: ArrayLike) -> SymMat4:
        """Pack a symmetric 4x4 array (upper triangle is used)."""
        m = np.asarray(matrix, dtype=float)
        return cls(m[_SYM4_ROWS, _SYM4_COLS])

    def to_array(self) -> np.ndarray:
        """Unpack to a full symmetric 4x4 array."""
        m = np.zeros((4, 4))
        m[_SYM4_ROWS, _SYM4_COLS] = self.entries
        m[_SYM4_COLS, _SYM4_ROWS] = self.entries
        return m

    @property
    def trace(self) -> float:
        m = self.to_array()
        return float(np.trace(m))


class SpatioTemporalNormal(NamedTuple):
    """Unit normal (a, b, c, d) of a space-time hyperplane.

    (a, b, c) is the spatial part; d is the temporal component, which is
    minus the surface velocity projected on its spatial normal, divided by
    the time scale.
    """

    a: float
    b: float
    c: float
    d: float

    @property
    def spatial(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d])

    @classmethod
    def from_array(cls, vec: ArrayLike) -> SpatioTemporalNormal:
        a, b, c, d = (float(x) for x in np.asarray(vec, dtype=float).reshape(4))
        return cls(a, b, c, d)


class StabilityLabel(enum.IntEnum):
    """Per-iteration registration label of a scan point.

    UNSTABLE covers genuinely moving points as well as unreliable ones
    (degenerate or newly observed neighborhoods).
    """

    STABLE = 0
    UNSTABLE = 1


class BoundingBox(NamedTuple):
    """Axis-aligned box given by its min and max corners (meters)."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    @classmethod
    def from_points(cls, points: ArrayLike) -> BoundingBox:
        """Tight box around an (N, 3) point set."""
        pts = as_points(points)
        if pts.shape[0] == 0:
            msg = "Cannot bound an empty point set"
            raise ValueError(msg)
        return cls(pts.min(axis=0), pts.max(axis=0))

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.max_corner, float) - np.asarray(self.min_corner, float)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    @property
    def max_edge(self) -> float:
        return float(np.max(self.extent))

    def contains(self, points: ArrayLike) -> np.ndarray:
        """Boolean mask of points inside the closed box."""
        pts = as_points(points)
        return np.all((pts >= self.min_corner) & (pts <= self.max_corner), axis=1)
