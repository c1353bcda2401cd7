"""Trajectory association, rigid alignment and absolute trajectory error."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial.transform import Rotation

from dynlio.core.errors import AlignmentError, AssociationError
from dynlio.core.geometry import Pose

logger = logging.getLogger(__name__)

DEFAULT_MAX_DT = 0.01


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-ordered poses.

    Attributes:
        times: (N,) strictly increasing timestamps in seconds
        poses: World-from-body pose per timestamp
    """

    times: np.ndarray
    poses: tuple[Pose, ...]

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float).reshape(-1)
        poses = tuple(self.poses)
        if times.shape[0] != len(poses):
            msg = f"Got {times.shape[0]} timestamps for {len(poses)} poses"
            raise ValueError(msg)
        if times.shape[0] > 1 and np.any(np.diff(times) <= 0):
            msg = "Trajectory timestamps must be strictly increasing"
            raise ValueError(msg)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "poses", poses)

    @classmethod
    def from_samples(cls, samples: Sequence[tuple[float, Pose]]) -> Trajectory:
        """Build from (time, pose) pairs."""
        return cls(np.array([t for t, _ in samples], dtype=float), tuple(p for _, p in samples))

    @classmethod
    def from_arrays(cls, times: ArrayLike, positions: ArrayLike, quats: ArrayLike) -> Trajectory:
        """Build from (N,) times, (N, 3) positions and (N, 4) x, y, z, w quaternions."""
        pos = np.asarray(positions, dtype=float).reshape(-1, 3)
        q = np.asarray(quats, dtype=float).reshape(-1, 4)
        return cls(np.asarray(times, dtype=float), tuple(Pose(qi, pi) for qi, pi in zip(q, pos)))

    def __len__(self) -> int:
        return self.times.shape[0]

    def __iter__(self) -> Iterator[tuple[float, Pose]]:
        return zip(self.times.tolist(), self.poses)

    @property
    def positions(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 3))
        return np.stack([p.translation for p in self.poses])

    @property
    def quaternions(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 4))
        return np.stack([p.quat for p in self.poses])

    def transformed(self, transform: Pose) -> Trajectory:
        """Apply ``transform`` on the world side of every pose."""
        return Trajectory(self.times, tuple(transform @ p for p in self.poses))


class PosePair(NamedTuple):
    """Estimated and reference pose at one associated timestamp."""

    time: float
    estimate: Pose
    reference: Pose


class AteResult(NamedTuple):
    """Output of :func:`evaluate_ate`."""

    rmse: float
    errors: np.ndarray
    alignment: Pose
    pairs: list[PosePair]


def associate(
    estimate: Trajectory, reference: Trajectory, max_dt: float = DEFAULT_MAX_DT
) -> list[PosePair]:
    """Pair each estimated pose with the reference pose nearest in time.

    Pairs further apart than ``max_dt`` are dropped. On a tie the earlier
    reference sample wins.

    Raises:
        ValueError: If ``max_dt`` is not positive
        AssociationError: If nothing pairs up
    """
    if not max_dt > 0:
        msg = f"max_dt must be positive, got {max_dt}"
        raise ValueError(msg)
    if len(estimate) == 0 or len(reference) == 0:
        msg = "Cannot associate an empty trajectory"
        raise AssociationError(msg)

    ref_t = reference.times
    idx = np.searchsorted(ref_t, estimate.times)
    lo = np.clip(idx - 1, 0, len(ref_t) - 1)
    hi = np.clip(idx, 0, len(ref_t) - 1)
    d_lo = np.abs(estimate.times - ref_t[lo])
    d_hi = np.abs(ref_t[hi] - estimate.times)
    nearest = np.where(d_hi < d_lo, hi, lo)
    gap = np.minimum(d_lo, d_hi)

    pairs = [
        PosePair(float(estimate.times[i]), estimate.poses[i], reference.poses[int(nearest[i])])
        for i in np.flatnonzero(gap <= max_dt)
    ]
    if not pairs:
        msg = (
            f"No timestamps within {max_dt} s: estimate spans "
            f"[{estimate.times[0]:.3f}, {estimate.times[-1]:.3f}], reference spans "
            f"[{ref_t[0]:.3f}, {ref_t[-1]:.3f}]"
        )
        raise AssociationError(msg)
    if len(pairs) < len(estimate):
        logger.debug("Associated %d of %d estimated poses", len(pairs), len(estimate))
    return pairs


def _positions(pairs: Sequence[PosePair]) -> tuple[np.ndarray, np.ndarray]:
    est = np.array([p.estimate.translation for p in pairs], dtype=float).reshape(-1, 3)
    ref = np.array([p.reference.translation for p in pairs], dtype=float).reshape(-1, 3)
    return est, ref


def umeyama_align(pairs: Sequence[PosePair]) -> Pose:
    """Rigid transform T minimizing sum ||T(p_est) - p_ref||^2 (no scale).

    Raises:
        AlignmentError: With fewer than three pairs or collinear positions
    """
    est, ref = _positions(pairs)
    n = est.shape[0]
    if n < 3:
        msg = f"Alignment needs at least 3 pose pairs, got {n}"
        raise AlignmentError(msg)

    mu_e, mu_r = est.mean(axis=0), ref.mean(axis=0)
    e0, r0 = est - mu_e, ref - mu_r
    spread = np.linalg.svd(e0, compute_uv=False)
    if spread[1] <= 1e-9 * max(1.0, spread[0]):
        msg = (
            f"Estimated positions are collinear (singular values {spread.round(12).tolist()}); "
            "rotation about the line is unobservable"
        )
        raise AlignmentError(msg)

    cov = r0.T @ e0 / n
    u, _, vt = np.linalg.svd(cov)
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1.0
    rot = u @ s @ vt
    trans = mu_r - rot @ mu_e
    return Pose.from_rotation(Rotation.from_matrix(rot), trans)


def position_errors(pairs: Sequence[PosePair], alignment: Pose | None = None) -> np.ndarray:
    """Per-pair position error norms after applying ``alignment`` to the estimate."""
    est, ref = _positions(pairs)
    if alignment is not None:
        est = alignment.apply(est)
    return np.linalg.norm(est - ref, axis=1)


def ate_rmse(pairs: Sequence[PosePair], alignment: Pose | None = None) -> float:
    """Root-mean-square position error of already aligned pairs.

    Args:
        pairs: Associated poses
        alignment: Transform applied to the estimates first (identity if None)
    """
    if len(pairs) == 0:
        msg = "ate_rmse needs at least one pose pair"
        raise ValueError(msg)
    err = position_errors(pairs, alignment)
    return float(np.sqrt(np.mean(err**2)))


def evaluate_ate(
    estimate: Trajectory, reference: Trajectory, max_dt: float = DEFAULT_MAX_DT
) -> AteResult:
    """Associate, align and score an estimated trajectory in one call."""
    pairs = associate(estimate, reference, max_dt)
    alignment = umeyama_align(pairs)
    errors = position_errors(pairs, alignment)
    rmse = float(np.sqrt(np.mean(errors**2)))
    logger.info("ATE RMSE %.4f m over %d poses", rmse, len(pairs))
    return AteResult(rmse, errors, alignment, pairs)
