"""Spatio-temporal normal estimation and stability classification.

A surface moving with velocity v sweeps a hypersurface through space-time
whose unit normal (a, b, c, d) satisfies d = -(a vx + b vy + c vz) when
time is measured in the same units as space. Points are therefore labeled
by the angle between their fitted 4D normal and its spatial projection.

Single-point functions take lists of :class:`StampedPoint`; the ``batch_*``
functions work on padded (M, K, 4) neighborhood stacks and are what the
estimator uses inside its iteration loop.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike

from .errors import DegenerateNeighborhoodError
from .geometry import (
    SpatioTemporalNormal,
    StabilityLabel,
    StampedPoint,
    SymMat4,
    as_vec3,
    stack_stamped,
)

Neighborhood = Union[Sequence[StampedPoint], np.ndarray]

DEFAULT_K_MIN = 8
DEFAULT_MAX_EIGEN_RATIO = 0.5
_TIE_TOL = 1e-12
_SPATIAL_EPS = 1e-9


class NormalEstimate(NamedTuple):
    """Result of a single space-time normal fit.

    Attributes:
        normal: Fitted unit normal, or None when the neighborhood is degenerate
        degenerate: True when the point must be treated as unstable
        eigenvalues: Ascending eigenvalues of the neighborhood covariance
            (empty when the fit was not attempted)
        reason: Short description of why the fit is degenerate
    """

    normal: SpatioTemporalNormal | None
    degenerate: bool
    eigenvalues: np.ndarray
    reason: str = ""


def _as_xyzt(neighborhood: Neighborhood) -> np.ndarray:
    if isinstance(neighborhood, np.ndarray):
        arr = np.asarray(neighborhood, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 4:
            msg = f"Neighborhood array must have shape (N, 4), got {arr.shape}"
            raise ValueError(msg)
        return arr
    positions, times = stack_stamped(list(neighborhood))
    return np.column_stack([positions, times])


def spacetime_covariance(
    neighborhood: Neighborhood, time_scale: float = 1.0
) -> tuple[SymMat4, np.ndarray]:
    """Covariance of a neighborhood's scaled (x, y, z, t) coordinates.

    Times are multiplied by ``time_scale`` before accumulation and the
    covariance uses the population divisor |N|.

    Args:
        neighborhood: Stamped points, or an (N, 4) array of (x, y, z, t)
        time_scale: Positive factor applied to all times

    Returns:
        Tuple of (covariance, centroid) where centroid is the mean scaled
        4-vector

    Raises:
        DegenerateNeighborhoodError: If fewer than 2 points are given
        ValueError: If time_scale is not positive
    """
    if not time_scale > 0:
        msg = f"time_scale must be positive, got {time_scale}"
        raise ValueError(msg)
    xyzt = _as_xyzt(neighborhood).copy()
    if xyzt.shape[0] < 2:
        msg = f"Need at least 2 points for a covariance, got {xyzt.shape[0]}"
        raise DegenerateNeighborhoodError(msg)
    xyzt[:, 3] *= time_scale
    centroid = xyzt.mean(axis=0)
    centered = xyzt - centroid
    cov = centered.T @ centered / xyzt.shape[0]
    return SymMat4.from_array(cov), centroid


def batch_spacetime_covariance(
    xyzt: np.ndarray, mask: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Covariances of many padded neighborhoods at once.

    Args:
        xyzt: (M, K, 4) scaled coordinates
        mask: (M, K) boolean validity mask; all valid when None

    Returns:
        Tuple of (covariances (M, 4, 4), centroids (M, 4), counts (M,))
    """
    m, k, _ = xyzt.shape
    w = np.ones((m, k)) if mask is None else mask.astype(float)
    counts = w.sum(axis=1)
    safe = np.maximum(counts, 1.0)
    centroids = np.einsum("mk,mki->mi", w, xyzt) / safe[:, None]
    centered = (xyzt - centroids[:, None, :]) * w[:, :, None]
    cov = np.einsum("mki,mkj->mij", centered, centered) / safe[:, None, None]
    return cov, centroids, counts


def _canonical_signs(vectors: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Sign factors (+1/-1) that canonicalize each row of ``vectors``.

    The spatial part is made to point along ``reference``. When the spatial
    part is (near) zero, d >= 0 is used instead; when the spatial part is
    perpendicular to the reference, the first non-zero entry is made positive.
    """
    spatial_norm = np.linalg.norm(vectors[:, :3], axis=1)
    along = np.einsum("mi,mi->m", vectors[:, :3], reference)
    ref_norm = np.linalg.norm(reference, axis=1)
    signs = np.ones(vectors.shape[0])

    use_ref = (spatial_norm > _SPATIAL_EPS) & (np.abs(along) > _SPATIAL_EPS * ref_norm)
    signs[use_ref] = np.where(along[use_ref] < 0, -1.0, 1.0)

    use_d = (spatial_norm <= _SPATIAL_EPS) & (np.abs(vectors[:, 3]) > 0)
    signs[use_d] = np.where(vectors[use_d, 3] < 0, -1.0, 1.0)

    rest = ~(use_ref | use_d)
    if np.any(rest):
        sub = vectors[rest]
        first = np.argmax(np.abs(sub) > _SPATIAL_EPS, axis=1)
        lead = sub[np.arange(sub.shape[0]), first]
        signs[rest] = np.where(lead < 0, -1.0, 1.0)
    return signs


def batch_smallest_eigenvectors(
    covariances: np.ndarray, reference: ArrayLike = (0.0, 0.0, 1.0)
) -> tuple[np.ndarray, np.ndarray]:
    """Smallest-eigenvalue eigenvectors of a stack of symmetric 4x4 matrices.

    Args:
        covariances: (M, 4, 4) symmetric matrices
        reference: (3,) or (M, 3) direction the spatial part is oriented along

    Returns:
        Tuple of (eigenvalues (M, 4) ascending, canonical unit vectors (M, 4))
    """
    m = covariances.shape[0]
    ref = np.broadcast_to(np.asarray(reference, dtype=float), (m, 3))
    eigvals, eigvecs = np.linalg.eigh(covariances)
    vectors = eigvecs[:, :, 0].copy()
    vectors *= _canonical_signs(vectors, ref)[:, None]

    traces = np.abs(np.trace(covariances, axis1=1, axis2=2))
    tol = _TIE_TOL * np.maximum(traces, np.finfo(float).tiny)
    tied = (eigvals[:, 1] - eigvals[:, 0]) < tol
    for row in np.flatnonzero(tied):
        group = np.flatnonzero(eigvals[row] - eigvals[row, 0] < tol[row])
        candidates = eigvecs[row][:, group].T
        candidates = candidates * _canonical_signs(
            candidates, np.broadcast_to(ref[row], (group.size, 3))
        )[:, None]
        vectors[row] = max(candidates, key=lambda v: tuple(v))
    return eigvals, vectors


def smallest_eigenvector(
    m: SymMat4 | np.ndarray, reference: ArrayLike = (0.0, 0.0, 1.0)
) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue of a symmetric 4x4 matrix and its unit eigenvector.

    The eigenvector sign is canonicalized against ``reference``. When the two
    smallest eigenvalues tie (within 1e-12 of the trace), the lexicographically
    largest canonical eigenvector of the tied group is returned.

    Args:
        m: Symmetric matrix, packed or as a 4x4 array
        reference: Direction the spatial part is oriented along

    Returns:
        Tuple of (eigenvalue, eigenvector)
    """
    arr = m.to_array() if isinstance(m, SymMat4) else np.asarray(m, dtype=float)
    eigvals, vectors = batch_smallest_eigenvectors(arr[None], as_vec3(reference, "reference"))
    return float(eigvals[0, 0]), vectors[0]


def batch_estimate_normals(
    xyzt: np.ndarray,
    mask: np.ndarray,
    frame_ids: np.ndarray,
    reference: np.ndarray,
    k_min: int = DEFAULT_K_MIN,
    max_eigen_ratio: float = DEFAULT_MAX_EIGEN_RATIO,
) -> tuple[np.ndarray, np.ndarray]:
    """Fit space-time normals for many padded neighborhoods.

    Args:
        xyzt: (M, K, 4) coordinates with times already scaled
        mask: (M, K) validity mask
        frame_ids: (M, K) non-negative frame indices of each neighbor
        reference: (M, 3) orientation directions (query point to sensor)
        k_min: Minimum number of valid neighbors
        max_eigen_ratio: Maximum accepted ratio of the two smallest eigenvalues

    Returns:
        Tuple of (normals (M, 4), degenerate (M,) bool)
    """
    cov, _, counts = batch_spacetime_covariance(xyzt, mask)
    eigvals, normals = batch_smallest_eigenvectors(cov, reference)

    ids = np.sort(np.where(mask, frame_ids, -1), axis=1)
    fresh = ids >= 0
    fresh[:, 1:] &= ids[:, 1:] != ids[:, :-1]
    distinct_frames = fresh.sum(axis=1)

    lam0 = np.maximum(eigvals[:, 0], 0.0)
    lam1 = eigvals[:, 1]
    scale = np.maximum(np.abs(eigvals[:, 3]), np.finfo(float).tiny)
    flat = lam1 <= 1e-12 * scale
    ratio = np.divide(lam0, lam1, out=np.ones_like(lam0), where=~flat)

    degenerate = (
        (counts < k_min) | (distinct_frames < 2) | flat | (ratio > max_eigen_ratio)
    )
    return normals, degenerate


def estimate_st_normal(
    query: StampedPoint,
    neighbors: Sequence[StampedPoint],
    time_scale: float = 1.0,
    *,
    sensor_origin: ArrayLike = (0.0, 0.0, 0.0),
    frame_ids: ArrayLike | None = None,
    k_min: int = DEFAULT_K_MIN,
    max_eigen_ratio: float = DEFAULT_MAX_EIGEN_RATIO,
) -> NormalEstimate:
    """Fit the space-time tangent hyperplane around a query point.

    Args:
        query: Point whose normal is estimated
        neighbors: Neighborhood drawn around the query
        time_scale: Factor applied to times before fitting
        sensor_origin: Sensor position; the spatial normal is oriented toward it
        frame_ids: Frame index of each neighbor. Distinct timestamps are used
            when omitted.
        k_min: Minimum neighborhood size
        max_eigen_ratio: Maximum accepted ratio of the two smallest eigenvalues

    Returns:
        NormalEstimate; ``degenerate`` is a classification signal, not a failure
    """
    positions, times = stack_stamped(list(neighbors))
    n = positions.shape[0]
    if n < max(k_min, 2):
        return NormalEstimate(None, True, np.zeros(0), f"{n} neighbors < k_min={k_min}")

    ids = np.unique(times) if frame_ids is None else np.unique(np.asarray(frame_ids))
    if ids.size < 2:
        return NormalEstimate(None, True, np.zeros(0), "neighborhood spans a single frame")

    # Shift times to the query before scaling; the covariance is shift-invariant
    xyzt = np.column_stack([positions, times - float(query.time)])
    cov, _ = spacetime_covariance(xyzt, time_scale)
    reference = as_vec3(sensor_origin, "sensor_origin") - np.asarray(query.position, float)
    eigvals, vectors = batch_smallest_eigenvectors(cov.to_array()[None], reference)
    eigvals = eigvals[0]

    scale = max(abs(eigvals[3]), np.finfo(float).tiny)
    if eigvals[1] <= 1e-12 * scale:
        return NormalEstimate(None, True, eigvals, "neighborhood has rank < 3")
    if max(eigvals[0], 0.0) / eigvals[1] > max_eigen_ratio:
        return NormalEstimate(None, True, eigvals, "smallest eigenvalues are not separated")
    return NormalEstimate(SpatioTemporalNormal.from_array(vectors[0]), False, eigvals)


def predicted_temporal_component(
    spatial_normal: ArrayLike, velocity: ArrayLike, time_scale: float = 1.0
) -> float:
    """Temporal component d implied by a surface velocity.

    d = -(a vx + b vy + c vz) / time_scale for a unit spatial normal (a, b, c).
    """
    n = as_vec3(spatial_normal, "spatial_normal")
    v = as_vec3(velocity, "velocity")
    return -(n[0] * v[0] + n[1] * v[1] + n[2] * v[2]) / time_scale


def temporal_angle(n: SpatioTemporalNormal | ArrayLike) -> float:
    """Angle in radians between a space-time normal and its spatial projection.

    Raises:
        ValueError: If the vector is all zeros or not finite
    """
    vec = n.as_array() if isinstance(n, SpatioTemporalNormal) else np.asarray(n, float)
    vec = vec.reshape(4)
    if not np.all(np.isfinite(vec)) or not np.any(vec):
        msg = f"Temporal angle is undefined for {vec}"
        raise ValueError(msg)
    return float(np.arctan2(abs(vec[3]), np.linalg.norm(vec[:3])))


def batch_temporal_angles(normals: np.ndarray) -> np.ndarray:
    """Temporal angles of an (M, 4) stack of normals."""
    return np.arctan2(np.abs(normals[:, 3]), np.linalg.norm(normals[:, :3], axis=1))


def _check_threshold(theta_thr: float) -> None:
    if not 0.0 < theta_thr < np.pi / 2:
        msg = f"theta_thr must lie in (0, pi/2), got {theta_thr}"
        raise ValueError(msg)


def classify_stability(
    n: NormalEstimate | SpatioTemporalNormal | None, theta_thr: float
) -> StabilityLabel:
    """Label a point from its space-time normal.

    Args:
        n: Normal, normal estimate, or None for a degenerate neighborhood
        theta_thr: Threshold angle in radians

    Returns:
        UNSTABLE when degenerate or when the temporal angle exceeds the threshold
    """
    _check_threshold(theta_thr)
    if isinstance(n, NormalEstimate):
        if n.degenerate or n.normal is None:
            return StabilityLabel.UNSTABLE
        n = n.normal
    if n is None:
        return StabilityLabel.UNSTABLE
    if temporal_angle(n) > theta_thr:
        return StabilityLabel.UNSTABLE
    return StabilityLabel.STABLE


def batch_classify(
    normals: np.ndarray, degenerate: np.ndarray, theta_thr: float
) -> np.ndarray:
    """Vectorized :func:`classify_stability`; returns uint8 labels."""
    _check_threshold(theta_thr)
    unstable = degenerate | (batch_temporal_angles(normals) > theta_thr)
    return np.where(unstable, StabilityLabel.UNSTABLE, StabilityLabel.STABLE).astype(np.uint8)
