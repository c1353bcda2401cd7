"""Declarative scene description and analytic ray casting.

Scenes are built from posed boxes and planes. Movers carry one primitive
along a constant linear and angular velocity, so their pose at any time is
closed-form. Rays carry their own timestamps; every ray sees the scene
posed at its own time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, NamedTuple, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial.transform import Rotation

from dynlio.core.geometry import Pose, as_points, as_vec3

_HIT_EPS = 1e-9
STATIC_ID = 0


@dataclass(frozen=True, eq=False)
class Box:
    """Solid box with half extents in its own frame, posed by ``pose``.

    Rays starting inside report the exit face, so a large box works as a
    closed room.
    """

    half_extents: np.ndarray
    pose: Pose = field(default_factory=Pose)

    def __post_init__(self) -> None:
        h = as_vec3(self.half_extents, "half_extents")
        if np.any(h <= 0):
            msg = f"Box half extents must be positive, got {h}"
            raise ValueError(msg)
        object.__setattr__(self, "half_extents", h)

    @classmethod
    def from_bounds(cls, lower: ArrayLike, upper: ArrayLike, yaw: float = 0.0) -> Box:
        """Box spanning [lower, upper] (before yaw about its center)."""
        lo, hi = as_vec3(lower, "lower"), as_vec3(upper, "upper")
        return cls((hi - lo) / 2, Pose.from_rotvec([0.0, 0.0, yaw], (hi + lo) / 2))

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "box",
            "half_extents": self.half_extents.tolist(),
            "center": self.pose.translation.tolist(),
            "rotvec": self.pose.rotation.as_rotvec().tolist(),
        }


@dataclass(frozen=True, eq=False)
class Plane:
    """Plane z = 0 of ``pose``; infinite unless ``half_size`` bounds its local x/y."""

    pose: Pose = field(default_factory=Pose)
    half_size: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.half_size is not None:
            hs = np.asarray(self.half_size, dtype=float).reshape(2)
            if np.any(hs <= 0):
                msg = f"Plane half_size must be positive, got {hs}"
                raise ValueError(msg)
            object.__setattr__(self, "half_size", hs)

    @classmethod
    def from_point_normal(
        cls, point: ArrayLike, normal: ArrayLike, half_size: ArrayLike | None = None,
        up: ArrayLike = (0.0, 0.0, 1.0),
    ) -> Plane:
        """Plane through ``point`` with unit ``normal``.

        For a finite plane the local y axis is the projection of ``up`` (or
        of the world x axis when ``up`` is parallel to the normal).
        """
        n = as_vec3(normal, "normal")
        n = n / np.linalg.norm(n)
        u = as_vec3(up, "up")
        y = u - (u @ n) * n
        if np.linalg.norm(y) < 1e-9:
            x_axis = np.array([1.0, 0.0, 0.0])
            y = x_axis - (x_axis @ n) * n
        y = y / np.linalg.norm(y)
        x = np.cross(y, n)
        rot = Rotation.from_matrix(np.column_stack([x, y, n]))
        return cls(Pose.from_rotation(rot, as_vec3(point, "point")),
                   None if half_size is None else np.asarray(half_size, float))

    @property
    def normal(self) -> np.ndarray:
        return self.pose.rotation_matrix[:, 2]

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "plane",
            "point": self.pose.translation.tolist(),
            "rotvec": self.pose.rotation.as_rotvec().tolist(),
            "half_size": None if self.half_size is None else self.half_size.tolist(),
        }


Primitive = Union[Box, Plane]


@dataclass(frozen=True, eq=False)
class Mover:
    """Primitive moving with constant linear and angular velocity.

    At time t the primitive's pose is R = Exp(w t) R0 about its own origin
    and c = c0 + v t.
    """

    primitive: Primitive
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mover_id: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "velocity", as_vec3(self.velocity, "velocity"))
        object.__setattr__(
            self, "angular_velocity", as_vec3(self.angular_velocity, "angular_velocity")
        )
        if not 1 <= int(self.mover_id) < 0xFFFF:
            msg = f"mover_id must lie in [1, 65535), got {self.mover_id}"
            raise ValueError(msg)

    def poses_at(self, times: np.ndarray) -> tuple[Rotation, np.ndarray]:
        """Rotations and origins of the primitive at each time."""
        t = np.asarray(times, dtype=float).reshape(-1)
        base = self.primitive.pose
        rot = Rotation.from_rotvec(np.outer(t, self.angular_velocity)) * base.rotation
        return rot, base.translation + np.outer(t, self.velocity)

    def pose_at(self, t: float) -> Pose:
        rot, trans = self.poses_at(np.array([t]))
        return Pose.from_rotation(rot[0], trans[0])

    def to_dict(self) -> dict[str, Any]:
        return {
            "primitive": self.primitive.to_dict(),
            "velocity": self.velocity.tolist(),
            "angular_velocity": self.angular_velocity.tolist(),
            "mover_id": int(self.mover_id),
        }


@dataclass(frozen=True, eq=False)
class SceneSpec:
    """Static primitives plus movers; serializable with :meth:`to_dict`."""

    statics: tuple[Primitive, ...] = ()
    movers: tuple[Mover, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "statics", tuple(self.statics))
        object.__setattr__(self, "movers", tuple(self.movers))
        ids = [m.mover_id for m in self.movers]
        if len(set(ids)) != len(ids):
            msg = f"Mover ids must be unique, got {ids}"
            raise ValueError(msg)

    def without_movers(self) -> SceneSpec:
        return SceneSpec(self.statics, ())

    def to_dict(self) -> dict[str, Any]:
        return {
            "statics": [p.to_dict() for p in self.statics],
            "movers": [m.to_dict() for m in self.movers],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SceneSpec:
        """Inverse of :meth:`to_dict`.

        Raises:
            ValueError: On unknown primitive types or missing fields
        """
        try:
            statics = tuple(primitive_from_dict(p) for p in data.get("statics", []))
            movers = tuple(
                Mover(
                    primitive_from_dict(m["primitive"]),
                    m.get("velocity", (0, 0, 0)),
                    m.get("angular_velocity", (0, 0, 0)),
                    int(m.get("mover_id", i + 1)),
                )
                for i, m in enumerate(data.get("movers", []))
            )
        except (KeyError, TypeError) as e:
            msg = f"Invalid scene description: {e}"
            raise ValueError(msg) from e
        return cls(statics, movers)


def primitive_from_dict(data: dict[str, Any]) -> Primitive:
    kind = data.get("type")
    rotvec = data.get("rotvec", (0.0, 0.0, 0.0))
    if kind == "box":
        return Box(data["half_extents"], Pose.from_rotvec(rotvec, data.get("center", (0, 0, 0))))
    if kind == "plane":
        half = data.get("half_size")
        return Plane(Pose.from_rotvec(rotvec, data.get("point", (0, 0, 0))),
                     None if half is None else np.asarray(half, float))
    msg = f"Unknown primitive type: {kind!r}"
    raise ValueError(msg)


class RayHit(NamedTuple):
    """Nearest intersection of one ray."""

    range: float
    dynamic: bool
    mover_id: int


def _intersect_box(
    half: np.ndarray, rot: Rotation, center: np.ndarray, origins: np.ndarray, dirs: np.ndarray
) -> np.ndarray:
    inv = rot.inv()
    o = inv.apply(origins - center)
    d = inv.apply(dirs)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    parallel = np.abs(d) < 1e-15
    inside_slab = np.abs(o) <= half
    near = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), np.minimum(t1, t2))
    far = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), np.maximum(t1, t2))
    t_near = near.max(axis=1)
    t_far = far.min(axis=1)
    hit = t_far >= np.maximum(t_near, _HIT_EPS)
    t = np.where(t_near > _HIT_EPS, t_near, t_far)
    return np.where(hit, t, np.inf)


def _intersect_plane(
    half_size: np.ndarray | None, rot: Rotation, point: np.ndarray,
    origins: np.ndarray, dirs: np.ndarray,
) -> np.ndarray:
    inv = rot.inv()
    o = inv.apply(origins - point)
    d = inv.apply(dirs)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -o[:, 2] / d[:, 2]
    valid = (np.abs(d[:, 2]) > 1e-12) & (t > _HIT_EPS)
    if half_size is not None:
        local = o[:, :2] + t[:, None] * d[:, :2]
        valid &= np.all(np.abs(local) <= half_size, axis=1)
    return np.where(valid, t, np.inf)


def _intersect(
    primitive: Primitive, rot: Rotation, origin: np.ndarray, origins: np.ndarray, dirs: np.ndarray
) -> np.ndarray:
    if isinstance(primitive, Box):
        return _intersect_box(primitive.half_extents, rot, origin, origins, dirs)
    return _intersect_plane(primitive.half_size, rot, origin, origins, dirs)


def batch_raycast(
    scene: SceneSpec,
    times: ArrayLike,
    origins: ArrayLike,
    directions: ArrayLike,
    max_range: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Cast many rays, each against the scene posed at its own time.

    Args:
        scene: Scene to intersect
        times: (N,) ray times
        origins: (N, 3) world origins
        directions: (N, 3) unit world directions
        max_range: Hits beyond this distance count as misses

    Returns:
        Tuple of (ranges (N,) with inf on miss, hit ids (N,) uint16 where 0
        is static geometry and misses are 0xFFFF)
    """
    o = as_points(origins, "origins")
    d = as_points(directions, "directions")
    t = np.asarray(times, dtype=float).reshape(-1)
    n = o.shape[0]
    best = np.full(n, np.inf)
    ids = np.full(n, 0xFFFF, dtype=np.uint16)

    for primitive in scene.statics:
        rng = _intersect(primitive, primitive.pose.rotation, primitive.pose.translation, o, d)
        closer = rng < best
        best[closer] = rng[closer]
        ids[closer] = STATIC_ID

    for mover in scene.movers:
        rot, centers = mover.poses_at(t)
        if not np.any(mover.angular_velocity) and not np.any(mover.velocity):
            rot = mover.primitive.pose.rotation
            centers = mover.primitive.pose.translation
        rng = _intersect(mover.primitive, rot, centers, o, d)
        closer = rng < best
        best[closer] = rng[closer]
        ids[closer] = mover.mover_id

    miss = best > max_range
    best[miss] = np.inf
    ids[miss] = 0xFFFF
    return best, ids


def raycast(
    scene: SceneSpec,
    t: float,
    origin: ArrayLike,
    direction: ArrayLike,
    max_range: float = 100.0,
) -> RayHit | None:
    """Nearest hit of a single ray at time t, or None on a miss."""
    d = as_vec3(direction, "direction")
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        msg = f"direction must be unit length, got norm {np.linalg.norm(d)}"
        raise ValueError(msg)
    ranges, ids = batch_raycast(scene, [t], as_vec3(origin, "origin")[None], d[None], max_range)
    if not np.isfinite(ranges[0]):
        return None
    return RayHit(float(ranges[0]), bool(ids[0] != STATIC_ID), int(ids[0]))


def mover_by_id(scene: SceneSpec, mover_id: int) -> Mover:
    for mover in scene.movers:
        if mover.mover_id == mover_id:
            return mover
    msg = f"No mover with id {mover_id}"
    raise KeyError(msg)
