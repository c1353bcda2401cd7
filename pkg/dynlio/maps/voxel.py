"""Voxel maps: the long-term plane map and the short-term static record.

:class:`PlaneVoxelMap` bins confirmed-static points into a hash grid and
keeps one fitted plane per voxel for point-to-plane correspondences.
:class:`StaticVoxelRecord` remembers which voxels near the sensor were seen
static recently; the spatial consistency check uses it to veto false
dynamic clusters.
"""

from __future__ import annotations

import logging
from typing import NamedTuple, Sequence

import numpy as np
from numpy.typing import ArrayLike

from dynlio.core.geometry import BoundingBox, as_points, as_vec3
from dynlio.core.utils import pack_keys, validate_positive, voxel_keys

logger = logging.getLogger(__name__)

# 27-neighborhood offsets, center first
_OFFSETS = np.array(
    sorted(
        ((i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)),
        key=lambda o: (o != (0, 0, 0), o),
    ),
    dtype=np.int64,
)


class VoxelKey(NamedTuple):
    """Integer voxel index floor(coordinate / voxel_size)."""

    ix: int
    iy: int
    iz: int

    @classmethod
    def of(cls, point: ArrayLike, voxel_size: float) -> VoxelKey:
        ix, iy, iz = (int(v) for v in voxel_keys(as_vec3(point)[None], voxel_size)[0])
        return cls(ix, iy, iz)


class PlaneVoxel(NamedTuple):
    """Plane fitted to the points of one voxel.

    Attributes:
        centroid: Mean of the voxel's points
        normal: Unit plane normal (smallest-eigenvalue eigenvector)
        residual: Mean squared point-to-plane distance in m^2
        point_count: Number of points used in the fit
        is_plane: Whether the planarity test passed
    """

    centroid: np.ndarray
    normal: np.ndarray
    residual: float
    point_count: int
    is_plane: bool


class Correspondence(NamedTuple):
    """Plane matched to a query point, with the point's foot on that plane."""

    plane: PlaneVoxel
    foot: np.ndarray
    distance: float
    plane_id: int


class BatchCorrespondences(NamedTuple):
    """Vectorized correspondence search result for M query points.

    ``valid`` marks points with a plane within range; the other arrays hold
    zeros (and ``plane_ids`` -1) where invalid.
    """

    valid: np.ndarray
    plane_ids: np.ndarray
    normals: np.ndarray
    centroids: np.ndarray
    distances: np.ndarray


def fit_plane(
    points: ArrayLike,
    plane_eps: float = 0.05**2,
    plane_ratio: float = 0.25,
    min_points: int = 6,
) -> PlaneVoxel:
    """Fit a plane to a point set by eigen-decomposition of its covariance.

    Args:
        points: (N, 3) points
        plane_eps: Largest accepted smallest eigenvalue (m^2)
        plane_ratio: Largest accepted ratio of smallest to middle eigenvalue
        min_points: Minimum number of points for a plane

    Returns:
        PlaneVoxel; ``is_plane`` is False when the test fails or points are too few
    """
    pts = as_points(points)
    n = pts.shape[0]
    if n == 0:
        return PlaneVoxel(np.zeros(3), np.array([0.0, 0.0, 1.0]), 0.0, 0, False)
    centroid = pts.mean(axis=0)
    if n < max(min_points, 3):
        return PlaneVoxel(centroid, np.array([0.0, 0.0, 1.0]), 0.0, n, False)

    centered = pts - centroid
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    normal = eigvecs[:, 0]
    # Fix the sign so repeated fits give identical normals
    lead = np.argmax(np.abs(normal))
    if normal[lead] < 0:
        normal = -normal
    normal = normal / np.linalg.norm(normal)

    lam_min = max(float(eigvals[0]), 0.0)
    lam_mid = float(eigvals[1])
    scale = max(float(eigvals[2]), np.finfo(float).tiny)
    if lam_mid <= 1e-12 * scale:
        is_plane = False
    else:
        is_plane = lam_min <= plane_eps and lam_min / lam_mid <= plane_ratio
    return PlaneVoxel(centroid, normal, lam_min, n, bool(is_plane))


class PlaneVoxelMap:
    """Hash grid of per-voxel plane fits.

    Each voxel keeps at most ``max_points`` points using reservoir sampling
    driven by a seeded generator, so identical insert sequences give
    identical maps.
    """

    def __init__(
        self,
        voxel_size: float = 1.0,
        max_points: int = 50,
        plane_eps: float = 0.05**2,
        plane_ratio: float = 0.25,
        min_points: int = 6,
        seed: int = 0,
    ):
        self.voxel_size = validate_positive(voxel_size, "voxel_size")
        self.max_points = int(max_points)
        self.plane_eps = float(plane_eps)
        self.plane_ratio = float(plane_ratio)
        self.min_points = int(min_points)
        self._rng = np.random.default_rng(seed)
        self._points: dict[int, np.ndarray] = {}
        self._seen: dict[int, int] = {}
        self._fits: dict[int, PlaneVoxel] = {}
        self._plane_codes = np.zeros(0, dtype=np.int64)
        self._plane_centroids = np.zeros((0, 3))
        self._plane_normals = np.zeros((0, 3))

    def __len__(self) -> int:
        return len(self._points)

    @property
    def n_planes(self) -> int:
        return int(self._plane_codes.shape[0])

    def voxel_points(self, key: VoxelKey | Sequence[int]) -> np.ndarray:
        """Retained points of one voxel (empty if unknown)."""
        code = int(pack_keys(np.asarray([key], dtype=np.int64))[0])
        return self._points.get(code, np.zeros((0, 3))).copy()

    def plane_at(self, key: VoxelKey | Sequence[int]) -> PlaneVoxel | None:
        """Fit of one voxel, or None when the voxel is empty."""
        code = int(pack_keys(np.asarray([key], dtype=np.int64))[0])
        return self._fits.get(code)

    def planes(self) -> list[PlaneVoxel]:
        """All voxels that currently hold a plane, ordered by voxel code."""
        return [self._fits[int(c)] for c in self._plane_codes]

    def insert_static_points(self, points: ArrayLike) -> PlaneVoxelMap:
        """Bin world-frame points into voxels and refit every touched voxel.

        Returns:
            Self, for chaining
        """
        pts = as_points(points)
        if pts.shape[0] == 0:
            return self
        codes = pack_keys(voxel_keys(pts, self.voxel_size))
        order = np.argsort(codes, kind="stable")
        codes, pts = codes[order], pts[order]
        unique, starts = np.unique(codes, return_index=True)
        ends = np.append(starts[1:], codes.shape[0])

        for code, lo, hi in zip(unique.tolist(), starts, ends):
            self._add_to_voxel(code, pts[lo:hi])
            self._fits[code] = fit_plane(
                self._points[code], self.plane_eps, self.plane_ratio, self.min_points
            )
        self._rebuild_index()
        logger.debug(
            "Inserted %d points into %d voxels; map has %d planes",
            pts.shape[0], unique.shape[0], self.n_planes,
        )
        return self

    def _add_to_voxel(self, code: int, new: np.ndarray) -> None:
        stored = self._points.get(code, np.zeros((0, 3)))
        seen = self._seen.get(code, 0)
        room = max(self.max_points - stored.shape[0], 0)
        if room:
            stored = np.vstack([stored, new[:room]])
            seen += min(room, new.shape[0])
            new = new[room:]
        if new.shape[0]:
            stored = stored.copy()
            slots = self._rng.integers(0, seen + 1 + np.arange(new.shape[0]))
            for point, slot in zip(new, slots):
                if slot < self.max_points:
                    stored[slot] = point
            seen += new.shape[0]
        self._points[code] = stored
        self._seen[code] = seen

    def _rebuild_index(self) -> None:
        codes = np.array(sorted(c for c, f in self._fits.items() if f.is_plane), dtype=np.int64)
        self._plane_codes = codes
        self._plane_centroids = np.array([self._fits[int(c)].centroid for c in codes]).reshape(-1, 3)
        self._plane_normals = np.array([self._fits[int(c)].normal for c in codes]).reshape(-1, 3)

    def batch_correspondences(
        self, points: np.ndarray, max_corr_dist: float = 0.5
    ) -> BatchCorrespondences:
        """Nearest plane (by point-to-plane distance) among 27 neighbor voxels.

        Args:
            points: (M, 3) world-frame query points
            max_corr_dist: Matches farther than this are rejected

        Returns:
            BatchCorrespondences for the queries
        """
        pts = as_points(points)
        m = pts.shape[0]
        best_dist = np.full(m, np.inf)
        best_slot = np.full(m, -1, dtype=np.int64)
        n_planes = self.n_planes
        if n_planes and m:
            keys = voxel_keys(pts, self.voxel_size)
            for offset in _OFFSETS:
                codes = pack_keys(keys + offset)
                slot = np.searchsorted(self._plane_codes, codes)
                slot_c = np.minimum(slot, n_planes - 1)
                hit = (slot < n_planes) & (self._plane_codes[slot_c] == codes)
                dist = np.abs(
                    np.einsum("mi,mi->m", pts - self._plane_centroids[slot_c],
                              self._plane_normals[slot_c])
                )
                better = hit & (dist < best_dist)
                best_dist[better] = dist[better]
                best_slot[better] = slot_c[better]

        valid = (best_slot >= 0) & (best_dist <= max_corr_dist)
        slots = np.where(valid, best_slot, 0)
        normals = np.zeros((m, 3))
        centroids = np.zeros((m, 3))
        if n_planes:
            normals[valid] = self._plane_normals[slots[valid]]
            centroids[valid] = self._plane_centroids[slots[valid]]
        plane_ids = np.where(valid, self._plane_codes[slots] if n_planes else -1, -1)
        return BatchCorrespondences(
            valid, plane_ids.astype(np.int64), normals, centroids, np.where(valid, best_dist, 0.0)
        )

    def query_correspondence(
        self, p: ArrayLike, max_corr_dist: float = 0.5
    ) -> Correspondence | None:
        """Plane correspondence and foot point of a single world-frame point."""
        point = as_vec3(p, "p")
        found = self.batch_correspondences(point[None], max_corr_dist)
        if not found.valid[0]:
            return None
        plane = self._fits[int(found.plane_ids[0])]
        signed = float(plane.normal @ (point - plane.centroid))
        foot = point - signed * plane.normal
        return Correspondence(plane, foot, abs(signed), int(found.plane_ids[0]))


class StaticVoxelRecord:
    """Short-term record of voxels recently confirmed static (M_scc)."""

    def __init__(self, voxel_size: float = 0.5, horizon: float = 10.0):
        self.voxel_size = validate_positive(voxel_size, "voxel_size")
        self.horizon = validate_positive(horizon, "horizon")
        self._codes = np.zeros(0, dtype=np.int64)
        self._times = np.zeros(0)
        self.now = -np.inf

    def __len__(self) -> int:
        return int(self._codes.shape[0])

    def last_confirmed(self, key: VoxelKey | Sequence[int]) -> float | None:
        code = pack_keys(np.asarray([key], dtype=np.int64))[0]
        slot = np.searchsorted(self._codes, code)
        if slot < len(self) and self._codes[slot] == code:
            return float(self._times[slot])
        return None

    def advance_to(self, now: float) -> StaticVoxelRecord:
        """Move the clock forward and forget voxels older than the horizon."""
        self.now = max(self.now, float(now))
        keep = self._times >= self.now - self.horizon
        self._codes, self._times = self._codes[keep], self._times[keep]
        return self

    def mark(self, keys: ArrayLike, now: float) -> StaticVoxelRecord:
        """Mark (N, 3) integer voxel keys static at time ``now``."""
        k = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
        self.advance_to(now)
        if k.shape[0]:
            codes = np.concatenate([self._codes, pack_keys(k)])
            times = np.concatenate([self._times, np.full(k.shape[0], float(now))])
            order = np.lexsort((-times, codes))
            codes, times = codes[order], times[order]
            first = np.ones(codes.shape[0], dtype=bool)
            first[1:] = codes[1:] != codes[:-1]
            self._codes, self._times = codes[first], times[first]
        return self

    def mark_points(self, points: ArrayLike, now: float) -> StaticVoxelRecord:
        """Mark the voxels containing world-frame points static."""
        return self.mark(voxel_keys(as_points(points), self.voxel_size), now)

    def box_keys(self, box: BoundingBox) -> np.ndarray:
        """(N, 3) keys of all voxels the box overlaps with positive volume."""
        lo = np.asarray(box.min_corner, float).copy()
        hi = np.asarray(box.max_corner, float).copy()
        if np.any(hi < lo):
            msg = f"Box max corner {hi} is below min corner {lo}"
            raise ValueError(msg)
        flat = hi - lo <= 0
        lo[flat] -= self.voxel_size / 2
        hi[flat] += self.voxel_size / 2
        lo_idx = np.floor(lo / self.voxel_size).astype(np.int64)
        hi_idx = np.maximum(np.ceil(hi / self.voxel_size).astype(np.int64) - 1, lo_idx)
        axes = [np.arange(a, b + 1) for a, b in zip(lo_idx, hi_idx)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.reshape(-1) for g in grid], axis=1)

    def live_codes(self, now: float | None = None) -> np.ndarray:
        """Packed keys confirmed within the horizon of ``now`` (default: the record clock)."""
        clock = self.now if now is None else max(self.now, float(now))
        return self._codes[self._times >= clock - self.horizon]

    def overlap_fraction(self, box: BoundingBox, now: float | None = None) -> float:
        """Fraction of the voxels intersecting the box marked static within the horizon.

        Expired entries never count, whether or not :meth:`advance_to` has
        pruned them yet.
        """
        codes = pack_keys(self.box_keys(box))
        if codes.shape[0] == 0:
            return 0.0
        return float(np.isin(codes, self.live_codes(now)).mean())


def insert_static_points(vmap: PlaneVoxelMap, points: ArrayLike) -> PlaneVoxelMap:
    """Insert confirmed-static world points into a plane map."""
    return vmap.insert_static_points(points)


def query_correspondence(
    vmap: PlaneVoxelMap, p: ArrayLike, max_corr_dist: float = 0.5
) -> Correspondence | None:
    """Find the plane correspondence of a point, or None."""
    return vmap.query_correspondence(p, max_corr_dist)


def scc_mark_static(
    record: StaticVoxelRecord, keys: Sequence[VoxelKey] | np.ndarray, now: float
) -> StaticVoxelRecord:
    """Mark voxel keys static at time ``now`` and expire stale ones."""
    return record.mark(np.asarray(keys, dtype=np.int64).reshape(-1, 3), now)


def scc_overlap_fraction(
    record: StaticVoxelRecord, box: BoundingBox, now: float | None = None
) -> float:
    """Voxel-count overlap of a box with the live static record, in [0, 1]."""
    return record.overlap_fraction(box, now)
