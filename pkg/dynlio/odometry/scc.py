"""Spatial consistency check separating genuine movers from false alarms.

Runs once per frame after registration. Unstable points of the downsampled
cloud are grown back to full resolution, clustered with DBSCAN, boxed, and
each plausible-size box is tested against the short-term static record:
clusters sitting in space that was recently seen static are false
positives, the rest are dynamic.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial import cKDTree
from sklearn.cluster import DBSCAN

from dynlio.core.geometry import BoundingBox, StabilityLabel, as_points
from dynlio.core.utils import pack_keys, validate_fraction, validate_positive, voxel_keys
from dynlio.maps.voxel import StaticVoxelRecord

logger = logging.getLogger(__name__)


class FinalLabel(enum.IntEnum):
    """Per-point label of the static-map branch."""

    STATIC = 0
    DYNAMIC = 1


@dataclass(frozen=True)
class SccConfig:
    """Tunables of the spatial consistency check (meters, m^3, fractions)."""

    upsample_radius: float = 0.3
    dbscan_eps: float = 0.5
    dbscan_min_pts: int = 5
    max_box_volume: float = 60.0
    max_box_edge: float = 8.0
    overlap_thr: float = 0.3
    sensor_near_radius: float = 30.0

    def __post_init__(self) -> None:
        for name in ("upsample_radius", "dbscan_eps", "max_box_volume", "max_box_edge",
                     "sensor_near_radius"):
            validate_positive(getattr(self, name), name)
        if int(self.dbscan_min_pts) < 1:
            msg = f"dbscan_min_pts must be >= 1, got {self.dbscan_min_pts}"
            raise ValueError(msg)
        validate_fraction(self.overlap_thr, "overlap_thr")


class Cluster(NamedTuple):
    """Density cluster: member indices and their tight bounding box."""

    indices: np.ndarray
    box: BoundingBox

    @property
    def count(self) -> int:
        return int(self.indices.shape[0])


class SccResult(NamedTuple):
    """Per-frame output of :func:`spatial_consistency_check`."""

    labels: np.ndarray
    candidates: np.ndarray
    clusters: list[Cluster]
    retained: list[Cluster]
    cluster_labels: list[FinalLabel]
    noise: np.ndarray


def upsample_unstable(
    downsampled_unstable: ArrayLike,
    full_cloud: ArrayLike,
    radius: float,
    workers: int = 1,
) -> np.ndarray:
    """Indices of full-resolution points within ``radius`` of any unstable point.

    Returns:
        Sorted int64 indices into ``full_cloud``
    """
    radius = validate_positive(radius, "radius")
    seeds = as_points(downsampled_unstable, "downsampled_unstable")
    full = as_points(full_cloud, "full_cloud")
    if seeds.shape[0] == 0 or full.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    dist, _ = cKDTree(seeds).query(
        full, k=1, distance_upper_bound=radius * (1 + 1e-9) + 1e-12, workers=workers
    )
    return np.flatnonzero(dist <= radius).astype(np.int64)


def dbscan(
    points: ArrayLike, eps: float, min_pts: int, n_jobs: int | None = None
) -> tuple[list[Cluster], np.ndarray]:
    """Density-based clustering of a point set.

    A core point has at least ``min_pts`` points (itself included) within
    ``eps``. Border assignment follows input order, so identical inputs give
    identical output.

    Returns:
        Tuple of (clusters in label order, indices of noise points)
    """
    eps = validate_positive(eps, "eps")
    if int(min_pts) < 1:
        msg = f"min_pts must be >= 1, got {min_pts}"
        raise ValueError(msg)
    pts = as_points(points)
    if pts.shape[0] == 0:
        return [], np.zeros(0, dtype=np.int64)
    labels = DBSCAN(eps=eps, min_samples=int(min_pts), n_jobs=n_jobs).fit(pts).labels_
    clusters = []
    for label in range(int(labels.max()) + 1):
        members = np.flatnonzero(labels == label)
        clusters.append(Cluster(members, BoundingBox.from_points(pts[members])))
    return clusters, np.flatnonzero(labels < 0).astype(np.int64)


def filter_clusters(clusters: Sequence[Cluster], config: SccConfig) -> list[Cluster]:
    """Drop clusters whose box exceeds the volume or edge cap (caps inclusive)."""
    kept = [
        c for c in clusters
        if c.box.volume <= config.max_box_volume and c.box.max_edge <= config.max_box_edge
    ]
    if len(kept) < len(clusters):
        logger.debug("Discarded %d oversized clusters", len(clusters) - len(kept))
    return kept


def classify_clusters(
    clusters: Sequence[Cluster],
    record: StaticVoxelRecord,
    overlap_thr: float,
    now: float | None = None,
) -> list[FinalLabel]:
    """Dynamic iff a cluster's box overlaps the live static record below ``overlap_thr``."""
    return [
        FinalLabel.DYNAMIC if record.overlap_fraction(c.box, now) < overlap_thr
        else FinalLabel.STATIC
        for c in clusters
    ]


def finalize_labels(
    n_points: int,
    candidates: ArrayLike,
    clusters: Sequence[Cluster],
    cluster_labels: Sequence[FinalLabel],
    noise: ArrayLike | None = None,
) -> np.ndarray:
    """Per-point FinalLabel array: members of Dynamic clusters are Dynamic.

    Cluster indices are positions within ``candidates``. Everything else,
    noise and discarded clusters included, is Static.
    """
    cand = np.asarray(candidates, dtype=np.int64).reshape(-1)
    labels = np.full(int(n_points), FinalLabel.STATIC, dtype=np.uint8)
    for cluster, label in zip(clusters, cluster_labels):
        if label == FinalLabel.DYNAMIC:
            labels[cand[cluster.indices]] = FinalLabel.DYNAMIC
    return labels


def spatial_consistency_check(
    full_cloud: ArrayLike,
    downsampled: ArrayLike,
    stability: ArrayLike,
    record: StaticVoxelRecord,
    config: SccConfig | None = None,
    workers: int = 1,
    now: float | None = None,
) -> SccResult:
    """Run upsampling, clustering, box filtering and the overlap test for one frame.

    Args:
        full_cloud: (N, 3) world-frame full-resolution scan
        downsampled: (M, 3) world-frame registration cloud
        stability: (M,) StabilityLabel values of the registration cloud
        record: Static record from previous frames (not modified)
        config: SCC tunables
        workers: Threads for neighbor queries and DBSCAN
        now: Frame time for the record horizon; the record clock when None

    Returns:
        SccResult with per-point FinalLabel values for ``full_cloud``
    """
    config = config or SccConfig()
    full = as_points(full_cloud, "full_cloud")
    ds = as_points(downsampled, "downsampled")
    unstable = ds[np.asarray(stability) == StabilityLabel.UNSTABLE]
    candidates = upsample_unstable(unstable, full, config.upsample_radius, workers)
    clusters, noise = dbscan(full[candidates], config.dbscan_eps, config.dbscan_min_pts, workers)
    retained = filter_clusters(clusters, config)
    cluster_labels = classify_clusters(retained, record, config.overlap_thr, now)
    labels = finalize_labels(full.shape[0], candidates, retained, cluster_labels, noise)
    logger.debug(
        "SCC: %d candidates, %d clusters, %d retained, %d dynamic points",
        candidates.shape[0], len(clusters), len(retained), int(labels.sum()),
    )
    return SccResult(labels, candidates, clusters, retained, cluster_labels, candidates[noise])


def update_static_record(
    record: StaticVoxelRecord,
    world_points: ArrayLike,
    stability: ArrayLike,
    sensor_position: ArrayLike,
    now: float,
    near_radius: float = 30.0,
) -> StaticVoxelRecord:
    """Mark voxels holding Stable points near the sensor as static.

    Voxels that also hold an Unstable point of the same frame are not marked.
    Call after classifying the frame so it cannot vouch for itself.
    """
    pts = as_points(world_points)
    labels = np.asarray(stability).reshape(-1)
    near = np.linalg.norm(pts - np.asarray(sensor_position, float), axis=1) <= near_radius
    keys = voxel_keys(pts, record.voxel_size)
    stable = near & (labels == StabilityLabel.STABLE)
    unstable_codes = pack_keys(keys[labels == StabilityLabel.UNSTABLE])
    stable_keys = keys[stable]
    clean = ~np.isin(pack_keys(stable_keys), unstable_codes)
    return record.mark(stable_keys[clean], now)
