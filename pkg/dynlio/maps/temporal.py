"""Temporal sliding-window map of recently registered points.

The map keeps roughly the last two seconds of world-frame points so that
every query point has neighbors spread over several frame times. Frames
enter through :meth:`TemporalWindowMap.push_frame`; stale points leave at the
same time. The spatial index keys on (x, y, z) only, time rides along.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial import cKDTree

from dynlio.core.errors import FrameOrderError
from dynlio.core.geometry import StampedPoint, as_points, as_vec3, stack_stamped
from dynlio.core.utils import validate_positive

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class _Frame:
    frame_time: float
    frame_id: int
    positions: np.ndarray
    times: np.ndarray


class TemporalWindowMap:
    """Time-bounded store of world-frame stamped points with exact kNN search.

    The index is rebuilt from the live arrays on every push, so readers that
    hold the arrays returned by :attr:`positions` / :attr:`times` keep a frozen
    snapshot while the map moves on.
    """

    def __init__(self, window_length: float = 2.0, workers: int = 1):
        """Initialize an empty map.

        Args:
            window_length: Seconds of history to keep behind the newest frame
            workers: Threads used by batched k-d tree queries
        """
        self.window_length = validate_positive(window_length, "window_length")
        self.workers = int(workers)
        self._frames: deque[_Frame] = deque()
        self._next_frame_id = 0
        self._positions = np.zeros((0, 3))
        self._times = np.zeros(0)
        self._frame_ids = np.zeros(0, dtype=np.int64)
        self._tree: cKDTree | None = None

    def __len__(self) -> int:
        return int(self._positions.shape[0])

    @property
    def positions(self) -> np.ndarray:
        """(N, 3) live positions in insertion order."""
        return self._positions

    @property
    def times(self) -> np.ndarray:
        """(N,) live acquisition times."""
        return self._times

    @property
    def frame_ids(self) -> np.ndarray:
        """(N,) frame index of each live point."""
        return self._frame_ids

    @property
    def frame_times(self) -> list[float]:
        """Times of the queued frames, oldest first."""
        return [f.frame_time for f in self._frames]

    @property
    def newest_time(self) -> float | None:
        return self._frames[-1].frame_time if self._frames else None

    @property
    def next_frame_id(self) -> int:
        """Frame id the next pushed frame will receive."""
        return self._next_frame_id

    def push_frame(
        self,
        frame_time: float,
        points: Sequence[StampedPoint] | ArrayLike,
        times: ArrayLike | None = None,
    ) -> TemporalWindowMap:
        """Insert a registered frame and evict points outside the window.

        Args:
            frame_time: Frame timestamp; must exceed every stored frame time
            points: Stamped points, or (N, 3) world positions with ``times``
            times: Per-point times when ``points`` is an array

        Returns:
            Self, for chaining

        Raises:
            FrameOrderError: If frame_time is not strictly increasing
        """
        frame_time = float(frame_time)
        if self._frames and frame_time <= self._frames[-1].frame_time:
            msg = (
                f"Frame time {frame_time} is not after the newest stored frame "
                f"{self._frames[-1].frame_time}"
            )
            raise FrameOrderError(msg)

        if times is None:
            positions, point_times = stack_stamped(list(points))  # type: ignore[arg-type]
        else:
            positions = as_points(points)
            point_times = np.asarray(times, dtype=float).reshape(-1)
            if point_times.shape[0] != positions.shape[0]:
                msg = "points and times must have the same length"
                raise ValueError(msg)

        self._frames.append(
            _Frame(frame_time, self._next_frame_id, positions.copy(), point_times.copy())
        )
        self._next_frame_id += 1
        self._evict(frame_time - self.window_length)
        self._rebuild()
        return self

    def _evict(self, horizon: float) -> None:
        while self._frames:
            oldest = self._frames[0]
            keep = oldest.times >= horizon
            if keep.all():
                break
            self._frames.popleft()
            if keep.any():
                self._frames.appendleft(
                    _Frame(oldest.frame_time, oldest.frame_id,
                           oldest.positions[keep], oldest.times[keep])
                )
                break
        # A later frame may still hold points older than the horizon
        trimmed: deque[_Frame] = deque()
        for frame in self._frames:
            keep = frame.times >= horizon
            if not keep.all():
                frame = _Frame(frame.frame_time, frame.frame_id,
                               frame.positions[keep], frame.times[keep])
            if frame.positions.shape[0] or frame is self._frames[-1]:
                trimmed.append(frame)
        self._frames = trimmed

    def _rebuild(self) -> None:
        if self._frames:
            self._positions = np.concatenate([f.positions for f in self._frames])
            self._times = np.concatenate([f.times for f in self._frames])
            self._frame_ids = np.concatenate(
                [np.full(f.positions.shape[0], f.frame_id, dtype=np.int64) for f in self._frames]
            )
        self._tree = cKDTree(self._positions) if len(self) else None
        logger.debug("Temporal map holds %d points in %d frames", len(self), len(self._frames))

    def _to_stamped(self, indices: np.ndarray) -> list[StampedPoint]:
        return [StampedPoint(self._positions[i].copy(), float(self._times[i])) for i in indices]

    def knn(self, query: ArrayLike, k: int) -> list[StampedPoint]:
        """Exact k nearest live points, ascending distance, ties by insertion order."""
        return self._to_stamped(self.knn_exact_indices(query, k))

    def knn_exact_indices(self, query: ArrayLike, k: int) -> np.ndarray:
        """Indices of the exact k nearest live points of a single query."""
        if k < 1:
            msg = f"k must be >= 1, got {k}"
            raise ValueError(msg)
        q = as_vec3(query, "query")
        n = len(self)
        if n == 0 or self._tree is None:
            return np.zeros(0, dtype=np.int64)
        if k >= n:
            candidates = np.arange(n)
        else:
            dist, _ = self._tree.query(q, k=k)
            kth = float(np.atleast_1d(dist)[-1])
            candidates = np.asarray(
                self._tree.query_ball_point(q, r=kth * (1 + 1e-9) + 1e-12), dtype=np.int64
            )
        d = np.linalg.norm(self._positions[candidates] - q, axis=1)
        order = np.lexsort((candidates, d))
        return candidates[order][:k]

    def knn_indices(
        self, queries: np.ndarray, k: int, max_dist: float = np.inf
    ) -> tuple[np.ndarray, np.ndarray]:
        """Batched kNN for many queries.

        Ties on distance are broken by insertion order, as in
        :meth:`knn_exact_indices`.

        Args:
            queries: (M, 3) query positions
            k: Neighbors per query
            max_dist: Neighbors farther than this are reported as missing

        Returns:
            Tuple of (distances (M, k), indices (M, k)); missing neighbors have
            infinite distance and index ``len(self)``
        """
        m = queries.shape[0]
        n = len(self)
        if m == 0 or n == 0 or self._tree is None:
            return np.full((m, k), np.inf), np.full((m, k), n, dtype=np.int64)
        # one extra neighbor exposes ties at the k-th distance
        dist, idx = self._tree.query(
            queries, k=k + 1, distance_upper_bound=max_dist, workers=self.workers
        )
        dist = dist.reshape(m, k + 1)
        idx = idx.reshape(m, k + 1).astype(np.int64)
        order = np.lexsort((idx, dist), axis=-1)
        dist = np.take_along_axis(dist, order, axis=1)
        idx = np.take_along_axis(idx, order, axis=1)
        boundary = dist[:, k - 1]
        tied = np.isfinite(dist[:, k]) & (dist[:, k] <= boundary * (1 + 1e-9) + 1e-12)
        for row in np.flatnonzero(tied):
            exact = self.knn_exact_indices(queries[row], k)
            d = np.linalg.norm(self._positions[exact] - queries[row], axis=1)
            keep = d <= max_dist
            dist[row, :k] = np.inf
            idx[row, :k] = n
            dist[row, : keep.sum()] = d[keep]
            idx[row, : keep.sum()] = exact[keep]
        return dist[:, :k], idx[:, :k]

    def radius_search(self, query: ArrayLike, r: float) -> list[StampedPoint]:
        """All live points within spatial distance r of the query."""
        return self._to_stamped(self.radius_indices(query, r))

    def radius_indices(self, query: ArrayLike, r: float) -> np.ndarray:
        """Sorted indices of live points within distance r of a query."""
        validate_positive(r, "r")
        q = as_vec3(query, "query")
        if self._tree is None:
            return np.zeros(0, dtype=np.int64)
        idx = np.asarray(self._tree.query_ball_point(q, r=r), dtype=np.int64)
        # The tree's boundary test can differ from ||p - q|| <= r by one ulp
        d = np.linalg.norm(self._positions[idx] - q, axis=1)
        return np.sort(idx[d <= r])
