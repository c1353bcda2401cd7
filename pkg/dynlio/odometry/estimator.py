"""Dynamic-aware iterated point-to-plane registration.

Every iteration re-transforms the scan with the current estimate, refits
space-time normals against the temporal map, keeps only Stable points for
plane correspondences in the voxel map and takes one damped Gauss-Newton
step on the Huber-robust point-to-plane cost plus an IMU prior. Labels and
pose are thus solved jointly rather than in a classify-then-register pass.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial import cKDTree

from dynlio.core.errors import RegistrationDegeneracyError
from dynlio.core.geometry import Pose, StabilityLabel, as_points, as_vec3
from dynlio.core.normals import batch_classify, batch_estimate_normals
from dynlio.maps.temporal import TemporalWindowMap
from dynlio.maps.voxel import PlaneVoxel, PlaneVoxelMap

from .preprocessing import NavState

logger = logging.getLogger(__name__)


class RegistrationMode(str, enum.Enum):
    """How stability labels enter registration.

    FULL reclassifies every iteration, SEQUENTIAL classifies once at the
    prior and NO_DYNAMIC treats every point as Stable.
    """

    FULL = "full"
    SEQUENTIAL = "sequential"
    NO_DYNAMIC = "no-dynamic"


@dataclass(frozen=True)
class RegistrationConfig:
    """Tunables of :func:`register_scan`.

    Angles are radians, distances meters. The prior sigmas are per second of
    propagation.
    """

    max_iter: int = 10
    epsilon: float = 1e-3
    theta_thr: float = float(np.deg2rad(5.7))
    k_neighbors: int = 20
    k_current: int = 5
    max_neighbor_dist: float = 1.0
    max_corr_dist: float = 0.5
    huber_delta: float = 0.1
    lidar_sigma: float = 0.02
    rot_sigma: float = 0.01
    trans_sigma: float = 0.1
    vel_sigma: float = 0.1
    min_stable_points: int = 50
    cache_tol: float = 0.05
    k_min: int = 8
    max_eigen_ratio: float = 0.5
    time_scale: float = 2.5
    initial_damping: float = 1e-3
    max_damping_tries: int = 8
    sticky_unstable: bool = False
    mode: RegistrationMode = RegistrationMode.FULL

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", RegistrationMode(self.mode))
        positive = (
            "max_iter", "epsilon", "theta_thr", "k_neighbors", "k_current",
            "max_neighbor_dist", "max_corr_dist", "huber_delta", "lidar_sigma",
            "rot_sigma", "trans_sigma", "vel_sigma", "min_stable_points",
            "cache_tol", "k_min", "max_eigen_ratio", "time_scale", "initial_damping",
            "max_damping_tries",
        )
        for name in positive:
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                msg = f"{name} must be positive, got {value}"
                raise ValueError(msg)
        if self.theta_thr >= np.pi / 2:
            msg = f"theta_thr must be below pi/2, got {self.theta_thr}"
            raise ValueError(msg)


class PriorTerm(NamedTuple):
    """Quadratic prior: residual (9,) = state minus prior, information (9, 9)."""

    residual: np.ndarray
    information: np.ndarray


@dataclass
class RegistrationResult:
    """Outcome of registering one scan.

    Attributes:
        state: Optimized state
        labels: (N,) uint8 StabilityLabel values at the returned state
        plane_ids: (N,) matched plane voxel code, -1 when unmatched or Unstable
        residuals: (N,) point-to-plane residual at the returned state (NaN when unmatched)
        iterations: Iterations run
        converged: Whether the last update fell below epsilon; False when the
            damping tries ran out or max_iter was reached
        n_correspondences: Stable points with a plane in the last iteration
        timing: Seconds spent per phase
        cost_history: (cost before, cost after) of each accepted step
    """

    state: NavState
    labels: np.ndarray
    plane_ids: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: bool
    n_correspondences: int
    timing: dict[str, float] = field(default_factory=dict)
    cost_history: list[tuple[float, float]] = field(default_factory=list)

    @property
    def stable_fraction(self) -> float:
        if self.labels.size == 0:
            return 0.0
        return float(np.mean(self.labels == StabilityLabel.STABLE))


class BootstrapFrame(NamedTuple):
    """A registered world-frame frame used to seed the maps."""

    frame_time: float
    points: np.ndarray
    times: np.ndarray


def huber_weights(residuals: np.ndarray, delta: float) -> np.ndarray:
    """IRLS weights of the Huber loss."""
    a = np.abs(residuals)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, np.finfo(float).tiny))


def huber_cost(residuals: np.ndarray, delta: float) -> np.ndarray:
    """Huber loss scaled so it equals r^2 inside the quadratic zone."""
    a = np.abs(residuals)
    return np.where(a <= delta, a**2, 2 * delta * a - delta**2)


def prior_information(dt: float, config: RegistrationConfig | None = None) -> np.ndarray:
    """Information matrix of the IMU prior over (rotation, translation, velocity).

    Position and velocity follow a white-acceleration model, so their blocks
    are correlated and a position correction also corrects velocity.
    """
    config = config or RegistrationConfig()
    dt = max(float(dt), 1e-3)
    eye = np.eye(3)
    q = config.vel_sigma**2
    cov = np.zeros((9, 9))
    cov[:3, :3] = (config.rot_sigma * dt) ** 2 * eye
    cov[3:6, 3:6] = ((config.trans_sigma * dt) ** 2 + q * dt**3 / 3) * eye
    cov[3:6, 6:9] = cov[6:9, 3:6] = q * dt**2 / 2 * eye
    cov[6:9, 6:9] = q * dt * eye
    return np.linalg.inv(cov)


def prior_residual(state: NavState, prior: NavState) -> np.ndarray:
    """9-vector (rotation log, translation, velocity) of state minus prior."""
    rot = (prior.pose.rotation.inv() * state.pose.rotation).as_rotvec()
    return np.concatenate(
        [rot, state.pose.translation - prior.pose.translation, state.velocity - prior.velocity]
    )


def batch_point_to_plane(
    pose: Pose, body_points: np.ndarray, normals: np.ndarray, centroids: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Residuals (M,) and (M, 6) Jacobians of many point-to-plane terms.

    The Jacobian is over a right rotation perturbation followed by an
    additive translation, matching :meth:`Pose.retract`.
    """
    rot = pose.rotation_matrix
    world = body_points @ rot.T + pose.translation
    residuals = np.einsum("mi,mi->m", normals, world - centroids)
    local_normals = normals @ rot
    jac = np.empty((body_points.shape[0], 6))
    jac[:, :3] = np.cross(body_points, local_normals)
    jac[:, 3:] = normals
    return residuals, jac


def point_to_plane_residual_and_jacobian(
    state: NavState | Pose, body_point: ArrayLike, plane: PlaneVoxel
) -> tuple[float, np.ndarray]:
    """Signed distance of a transformed body point to a plane and its (6,) Jacobian.

    Args:
        state: Current estimate (or its pose)
        body_point: Point in the body frame
        plane: Corresponding plane

    Returns:
        Tuple of (residual n.(R p + t - c), Jacobian over (rotation, translation))
    """
    if not plane.is_plane:
        msg = "Correspondence plane failed its planarity test"
        raise ValueError(msg)
    pose = state.pose if isinstance(state, NavState) else state
    r, jac = batch_point_to_plane(
        pose, as_vec3(body_point, "body_point")[None],
        np.asarray(plane.normal, float)[None], np.asarray(plane.centroid, float)[None],
    )
    return float(r[0]), jac[0]


def solve_gauss_newton_step(
    residuals: ArrayLike,
    jacobians: ArrayLike,
    weights: ArrayLike | None = None,
    prior: PriorTerm | None = None,
    damping: float = 0.0,
    max_tries: int = 8,
) -> np.ndarray:
    """Solve one damped normal-equation step.

    Solves (J^T W J + P + lambda I) delta = -(J^T W r + P r_p). Without a
    prior the velocity block is left at zero.

    Args:
        residuals: (M,) measurement residuals
        jacobians: (M, 6) Jacobians over (rotation, translation)
        weights: (M,) weights including 1/sigma^2; ones when None
        prior: Optional quadratic prior over the 9-dim state
        damping: Levenberg damping lambda
        max_tries: Damping escalations before giving up on a singular system

    Returns:
        9-vector update (rotation, translation, velocity)

    Raises:
        RegistrationDegeneracyError: If no finite solution is found
    """
    r = np.asarray(residuals, dtype=float).reshape(-1)
    jac = np.asarray(jacobians, dtype=float).reshape(-1, 6)
    w = np.ones_like(r) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    if r.size == 0 and prior is None:
        msg = "Gauss-Newton step needs at least one residual or a prior"
        raise RegistrationDegeneracyError(msg, n_constraints=0)

    dim = 9 if prior is not None else 6
    hessian = np.zeros((dim, dim))
    gradient = np.zeros(dim)
    hessian[:6, :6] = jac.T @ (w[:, None] * jac)
    gradient[:6] = jac.T @ (w * r)
    if prior is not None:
        hessian += prior.information
        gradient += prior.information @ prior.residual

    lam = float(damping)
    floor = 1e-9 * max(float(np.trace(hessian)) / dim, 1.0)
    for _ in range(max_tries + 1):
        try:
            delta = np.linalg.solve(hessian + lam * np.eye(dim), -gradient)
        except np.linalg.LinAlgError:
            delta = None
        if delta is not None and np.all(np.isfinite(delta)):
            return np.concatenate([delta, np.zeros(9 - dim)])
        lam = max(lam * 10.0, floor)
    msg = f"Normal equations stayed singular after {max_tries} damping escalations"
    raise RegistrationDegeneracyError(msg, n_constraints=int(r.size))


class ScanContext:
    """Per-scan data shared by all registration iterations.

    Holds the body-frame cloud, its current-frame neighbor indices (rigid
    invariant, computed once) and a frozen snapshot of the temporal map.
    """

    def __init__(
        self,
        body_points: np.ndarray,
        times: np.ndarray,
        mt: TemporalWindowMap,
        config: RegistrationConfig,
        frame_id: int | None = None,
    ):
        self.body = as_points(body_points)
        self.times = np.asarray(times, dtype=float).reshape(-1)
        if self.times.shape[0] != self.body.shape[0]:
            msg = "body_points and times must have the same length"
            raise ValueError(msg)
        self.config = config
        self.frame_id = mt.next_frame_id if frame_id is None else int(frame_id)
        self.ref_time = float(self.times.max()) if self.times.size else 0.0
        self.map_positions = mt.positions
        self.map_times = mt.times
        self.map_frame_ids = mt.frame_ids
        self._mt = mt
        self._workers = mt.workers

        n = self.body.shape[0]
        k = min(config.k_current, n)
        if k:
            dist, idx = cKDTree(self.body).query(
                self.body, k=k, distance_upper_bound=config.max_neighbor_dist,
                workers=self._workers,
            )
            self.current_idx = idx.reshape(n, k).astype(np.int64)
            self.current_valid = np.isfinite(dist.reshape(n, k))
        else:
            self.current_idx = np.zeros((n, 0), dtype=np.int64)
            self.current_valid = np.zeros((n, 0), dtype=bool)
        self._cached_world: np.ndarray | None = None
        self._cached_idx: np.ndarray | None = None
        self._cached_valid: np.ndarray | None = None

    def _map_neighbors(self, world: np.ndarray, use_cache: bool) -> tuple[np.ndarray, np.ndarray]:
        if use_cache and self._cached_world is not None:
            moved = np.max(np.linalg.norm(world - self._cached_world, axis=1), initial=0.0)
            if moved <= self.config.cache_tol:
                return self._cached_idx, self._cached_valid  # type: ignore[return-value]
        k = self.config.k_neighbors
        dist, raw = self._mt.knn_indices(world, k, self.config.max_neighbor_dist)
        valid = np.isfinite(dist)
        idx = np.where(valid, raw, 0).astype(np.int64)
        if use_cache:
            self._cached_world, self._cached_idx, self._cached_valid = world, idx, valid
        return idx, valid

    def normals_at(self, pose: Pose, use_cache: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Space-time normals (M, 4) and degenerate flags (M,) at a pose."""
        cfg = self.config
        world = pose.apply(self.body)
        m = world.shape[0]
        idx, valid = self._map_neighbors(world, use_cache)
        if m == 0:
            return np.zeros((0, 4)), np.zeros(0, dtype=bool)

        ts = cfg.time_scale
        map_xyzt = np.empty(idx.shape + (4,))
        if self.map_positions.shape[0]:
            map_xyzt[..., :3] = self.map_positions[idx]
            map_xyzt[..., 3] = (self.map_times[idx] - self.ref_time) * ts
            map_ids = self.map_frame_ids[idx]
        else:
            map_xyzt[:] = 0.0
            map_ids = np.zeros(idx.shape, dtype=np.int64)

        cur_idx = np.where(self.current_valid, self.current_idx, 0)
        cur_xyzt = np.empty(cur_idx.shape + (4,))
        cur_xyzt[..., :3] = world[cur_idx]
        cur_xyzt[..., 3] = (self.times[cur_idx] - self.ref_time) * ts
        cur_ids = np.full(cur_idx.shape, self.frame_id, dtype=np.int64)

        xyzt = np.concatenate([map_xyzt, cur_xyzt], axis=1)
        mask = np.concatenate([valid, self.current_valid], axis=1)
        ids = np.concatenate([map_ids, cur_ids], axis=1)
        reference = pose.translation - world
        return batch_estimate_normals(
            xyzt, mask, ids, reference, k_min=cfg.k_min, max_eigen_ratio=cfg.max_eigen_ratio
        )

    def classify(self, pose: Pose, use_cache: bool = True) -> np.ndarray:
        """uint8 stability labels of the scan at a pose."""
        normals, degenerate = self.normals_at(pose, use_cache)
        return batch_classify(normals, degenerate, self.config.theta_thr)


def classify_scan(
    body_points: ArrayLike,
    times: ArrayLike,
    state: NavState | Pose,
    mt: TemporalWindowMap,
    config: RegistrationConfig | None = None,
    frame_id: int | None = None,
) -> np.ndarray:
    """Classify a body-frame scan at a given state against the temporal map."""
    config = config or RegistrationConfig()
    pose = state.pose if isinstance(state, NavState) else state
    ctx = ScanContext(as_points(body_points), np.asarray(times, float), mt, config, frame_id)
    return ctx.classify(pose, use_cache=False)


class _Linearization(NamedTuple):
    body: np.ndarray
    normals: np.ndarray
    centroids: np.ndarray


def _objective(
    state: NavState,
    lin: _Linearization,
    prior: NavState,
    information: np.ndarray,
    config: RegistrationConfig,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, PriorTerm]:
    r, jac = batch_point_to_plane(state.pose, lin.body, lin.normals, lin.centroids)
    inv_var = 1.0 / config.lidar_sigma**2
    weights = huber_weights(r, config.huber_delta) * inv_var
    rp = prior_residual(state, prior)
    cost = float(np.sum(huber_cost(r, config.huber_delta)) * inv_var + rp @ information @ rp)
    return cost, r, jac, weights, PriorTerm(rp, information)


def register_scan(
    body_points: ArrayLike,
    times: ArrayLike,
    mt: TemporalWindowMap,
    mv: PlaneVoxelMap,
    prior: NavState,
    config: RegistrationConfig | None = None,
    *,
    information: np.ndarray | None = None,
    frame_id: int | None = None,
) -> RegistrationResult:
    """Register a deskewed scan against the maps, classifying points every iteration.

    Args:
        body_points: (N, 3) scan points in the body frame at scan end
        times: (N,) per-point acquisition times
        mt: Temporal window map (read only)
        mv: Long-term plane map (read only)
        prior: IMU-propagated state at scan end; also the initial estimate
        config: Registration tunables
        information: (9, 9) prior information; derived from a 0.1 s
            propagation when None
        frame_id: Frame index of this scan in the temporal map

    Returns:
        RegistrationResult at the optimized state

    Raises:
        RegistrationDegeneracyError: If fewer than ``min_stable_points``
            Stable points find a plane
    """
    config = config or RegistrationConfig()
    info = prior_information(0.1, config) if information is None else np.asarray(information)
    started = time.perf_counter()
    timing = {"normals": 0.0, "correspondence": 0.0, "solve": 0.0}

    ctx = ScanContext(as_points(body_points), np.asarray(times, float), mt, config, frame_id)
    n = ctx.body.shape[0]
    if mv.n_planes == 0:
        msg = "Plane map is empty; bootstrap the maps before registering"
        raise RegistrationDegeneracyError(msg, n_constraints=0)

    fixed: np.ndarray | None = None
    tick = time.perf_counter()
    if config.mode is RegistrationMode.NO_DYNAMIC:
        fixed = np.zeros(n, dtype=np.uint8)
    elif config.mode is RegistrationMode.SEQUENTIAL:
        fixed = ctx.classify(prior.pose, use_cache=False)
    timing["normals"] += time.perf_counter() - tick

    sticky = np.zeros(n, dtype=bool)
    state = prior
    damping = config.initial_damping
    converged = False
    iterations = 0
    n_corr = 0
    history: list[tuple[float, float]] = []

    for iterations in range(1, config.max_iter + 1):
        tick = time.perf_counter()
        if fixed is None:
            labels = ctx.classify(state.pose)
            if config.sticky_unstable:
                sticky |= labels == StabilityLabel.UNSTABLE
                labels = np.where(sticky, StabilityLabel.UNSTABLE, labels).astype(np.uint8)
        else:
            labels = fixed
        timing["normals"] += time.perf_counter() - tick

        tick = time.perf_counter()
        stable = np.flatnonzero(labels == StabilityLabel.STABLE)
        world = state.pose.apply(ctx.body[stable])
        corr = mv.batch_correspondences(world, config.max_corr_dist)
        n_corr = int(corr.valid.sum())
        timing["correspondence"] += time.perf_counter() - tick
        if n_corr < config.min_stable_points:
            msg = (
                f"Only {n_corr} Stable points found a plane "
                f"(need {config.min_stable_points})"
            )
            raise RegistrationDegeneracyError(msg, n_constraints=n_corr)

        tick = time.perf_counter()
        lin = _Linearization(
            ctx.body[stable[corr.valid]], corr.normals[corr.valid], corr.centroids[corr.valid]
        )
        cost, r, jac, weights, prior_term = _objective(state, lin, prior, info, config)
        accepted = None
        for _ in range(config.max_damping_tries):
            delta = solve_gauss_newton_step(r, jac, weights, prior_term, damping)
            candidate = state.retract(delta)
            new_cost = _objective(candidate, lin, prior, info, config)[0]
            if new_cost <= cost:
                accepted = (delta, candidate, new_cost)
                damping = max(damping / 10.0, 1e-9)
                break
            if np.linalg.norm(delta[:6]) < config.epsilon:
                # at the minimum up to round-off; keep the current state
                accepted = (delta, state, cost)
                break
            damping *= 10.0
        timing["solve"] += time.perf_counter() - tick

        if accepted is None:
            logger.debug(
                "No cost decrease after %d damping tries at iteration %d; stopping",
                config.max_damping_tries,
                iterations,
            )
            converged = False
            break
        delta, state, new_cost = accepted
        history.append((cost, new_cost))
        step = float(np.linalg.norm(delta[:6]))
        logger.debug("Iteration %d: cost %.6g -> %.6g, |delta| %.3g", iterations, cost, new_cost, step)
        if step < config.epsilon:
            converged = True
            break

    tick = time.perf_counter()
    if fixed is None:
        labels = ctx.classify(state.pose, use_cache=False)
        if config.sticky_unstable:
            labels = np.where(sticky, StabilityLabel.UNSTABLE, labels).astype(np.uint8)
    else:
        labels = fixed
    timing["normals"] += time.perf_counter() - tick

    plane_ids = np.full(n, -1, dtype=np.int64)
    residuals = np.full(n, np.nan)
    stable = np.flatnonzero(labels == StabilityLabel.STABLE)
    corr = mv.batch_correspondences(state.pose.apply(ctx.body[stable]), config.max_corr_dist)
    matched = stable[corr.valid]
    plane_ids[matched] = corr.plane_ids[corr.valid]
    residuals[matched], _ = batch_point_to_plane(
        state.pose, ctx.body[matched], corr.normals[corr.valid], corr.centroids[corr.valid]
    )
    timing["total"] = time.perf_counter() - started

    return RegistrationResult(
        state=state,
        labels=np.asarray(labels, dtype=np.uint8),
        plane_ids=plane_ids,
        residuals=residuals,
        iterations=iterations,
        converged=converged,
        n_correspondences=n_corr,
        timing=timing,
        cost_history=history,
    )


def initialize_maps(
    frames: Sequence[BootstrapFrame],
    mt: TemporalWindowMap | None = None,
    mv: PlaneVoxelMap | None = None,
    n_bootstrap: int = 5,
) -> tuple[TemporalWindowMap, PlaneVoxelMap]:
    """Seed both maps from the first registered frames, all points treated Stable.

    Args:
        frames: World-frame frames in time order; only the first
            ``n_bootstrap`` are used
        mt: Temporal map to fill; a default one when None
        mv: Plane map to fill; a default one when None
        n_bootstrap: Number of frames to insert

    Returns:
        Tuple of (temporal map, plane map)
    """
    if not frames:
        msg = "initialize_maps needs at least one frame"
        raise ValueError(msg)
    mt = TemporalWindowMap() if mt is None else mt
    mv = PlaneVoxelMap() if mv is None else mv
    for frame in list(frames)[:n_bootstrap]:
        mt.push_frame(frame.frame_time, frame.points, frame.times)
        mv.insert_static_points(frame.points)
    logger.info("Bootstrapped maps: %d temporal points, %d planes", len(mt), mv.n_planes)
    return mt, mv
