"""Tests for space-time normal estimation and stability classification."""

from dataclasses import replace

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from dynlio.core.errors import DegenerateNeighborhoodError
from dynlio.core.geometry import Pose, SpatioTemporalNormal, StabilityLabel, StampedPoint, SymMat4
from dynlio.core.normals import (
    NormalEstimate,
    batch_classify,
    batch_estimate_normals,
    batch_temporal_angles,
    classify_stability,
    estimate_st_normal,
    predicted_temporal_component,
    smallest_eigenvector,
    spacetime_covariance,
    temporal_angle,
)
from dynlio.data.presets import LIDAR_PRESETS, get_preset
from dynlio.maps.temporal import TemporalWindowMap
from dynlio.odometry.estimator import RegistrationConfig, ScanContext
from dynlio.simulation.generator import generate_frame

THETA_THR = np.deg2rad(5.7)
TIME_SCALE = 2.5


def _jacobi_eigenvalues(m, sweeps=50):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations."""
    a = np.array(m, dtype=float)
    n = a.shape[0]
    for _ in range(sweeps):
        off = np.sqrt(np.sum(a**2) - np.sum(np.diag(a) ** 2))
        if off < 1e-14:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta**2 + 1)) if theta else 1.0
                c = 1 / np.sqrt(t**2 + 1)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q], rot[q, p] = s, -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))


def _stamped(xyzt):
    return [StampedPoint(row[:3].copy(), float(row[3])) for row in xyzt]


class TestCovariance:
    """Test space-time covariance accumulation."""

    def test_population_covariance(self, rng):
        """Test the covariance uses the population divisor and scaled times."""
        xyzt = rng.normal(size=(30, 4))
        cov, centroid = spacetime_covariance(xyzt, time_scale=2.0)
        scaled = xyzt.copy()
        scaled[:, 3] *= 2.0
        assert np.allclose(cov.to_array(), np.cov(scaled.T, bias=True))
        assert np.allclose(centroid, scaled.mean(axis=0))

    def test_too_few_points(self):
        """Test a single point has no covariance."""
        with pytest.raises(DegenerateNeighborhoodError):
            spacetime_covariance(np.zeros((1, 4)))

    def test_time_scale_positive(self):
        """Test a zero time scale is rejected."""
        with pytest.raises(ValueError):
            spacetime_covariance(np.zeros((3, 4)), time_scale=0.0)

    def test_accepts_stamped_points(self):
        """Test stamped points and arrays give the same result."""
        xyzt = np.array([[0, 0, 0, 0.0], [1, 0, 0, 0.1], [0, 1, 0, 0.2]])
        from_array, _ = spacetime_covariance(xyzt)
        from_points, _ = spacetime_covariance(_stamped(xyzt))
        assert np.allclose(from_array.entries, from_points.entries)


class TestSmallestEigenvector:
    """Test the canonical smallest eigenvector."""

    def test_matches_jacobi(self, rng):
        """Test the eigenvalue against an independent Jacobi solver."""
        a = rng.normal(size=(4, 4))
        m = a @ a.T
        value, vector = smallest_eigenvector(SymMat4.from_array(m))
        assert value == pytest.approx(_jacobi_eigenvalues(m)[0], abs=1e-10)
        assert np.linalg.norm(vector) == pytest.approx(1.0)
        assert np.allclose(m @ vector, value * vector, atol=1e-9)

    def test_pure_temporal_direction(self):
        """Test a zero spatial part is oriented to d >= 0."""
        _, vector = smallest_eigenvector(np.diag([4.0, 3.0, 2.0, 1.0]))
        assert np.allclose(vector, [0.0, 0.0, 0.0, 1.0])

    def test_orientation_along_reference(self):
        """Test the spatial part points along the reference direction."""
        m = np.diag([1.0, 3.0, 4.0, 5.0])
        _, up = smallest_eigenvector(m, reference=(1.0, 0.0, 0.0))
        _, down = smallest_eigenvector(m, reference=(-1.0, 0.0, 0.0))
        assert up[0] == pytest.approx(1.0)
        assert down[0] == pytest.approx(-1.0)

    def test_tie_break_is_deterministic(self):
        """Test tied eigenvalues resolve to the same vector every time."""
        m = np.diag([1.0, 1.0, 5.0, 5.0])
        first = smallest_eigenvector(m)[1]
        second = smallest_eigenvector(m.copy())[1]
        assert np.array_equal(first, second)
        assert np.allclose(first, [1.0, 0.0, 0.0, 0.0])


class TestEstimateNormal:
    """Test single-point space-time normal fits."""

    def test_static_wall_is_spatial(self, moving_wall):
        """Test a static wall gives a zero temporal component."""
        xyzt = moving_wall(0.0)
        est = estimate_st_normal(StampedPoint(np.zeros(3), 0.2), _stamped(xyzt), TIME_SCALE)
        assert not est.degenerate
        assert abs(est.normal.d) < 1e-9
        assert classify_stability(est, THETA_THR) is StabilityLabel.STABLE

    @pytest.mark.parametrize("velocity", [0.5, 1.0, 3.0])
    def test_moving_wall_matches_prediction(self, moving_wall, velocity):
        """Test the fitted d equals -(n . v) / time_scale per unit spatial normal."""
        xyzt = moving_wall(velocity)
        est = estimate_st_normal(
            StampedPoint(np.zeros(3), 0.0), _stamped(xyzt), TIME_SCALE,
            sensor_origin=(-5.0, 0.0, 0.0),
        )
        n = est.normal.as_array()
        spatial_norm = np.linalg.norm(n[:3])
        predicted = predicted_temporal_component(n[:3] / spatial_norm, (velocity, 0, 0), TIME_SCALE)
        assert n[3] / spatial_norm == pytest.approx(predicted, rel=1e-6)
        assert n[0] < 0
        assert temporal_angle(est.normal) == pytest.approx(np.arctan(velocity / TIME_SCALE))

    def test_fast_wall_is_unstable(self, moving_wall):
        """Test a wall moving at 2 m/s is labeled unstable."""
        est = estimate_st_normal(StampedPoint(np.zeros(3), 0.0), _stamped(moving_wall(2.0)),
                                 TIME_SCALE)
        assert classify_stability(est, THETA_THR) is StabilityLabel.UNSTABLE

    def test_too_few_neighbors(self, moving_wall):
        """Test neighborhoods below k_min are degenerate."""
        xyzt = moving_wall(0.0)[:5]
        est = estimate_st_normal(StampedPoint(np.zeros(3), 0.0), _stamped(xyzt), k_min=8)
        assert est.degenerate
        assert est.normal is None

    def test_single_frame(self, moving_wall):
        """Test a neighborhood from one frame time is degenerate."""
        xyzt = moving_wall(0.0, n_frames=1)
        est = estimate_st_normal(StampedPoint(np.zeros(3), 0.0), _stamped(xyzt))
        assert est.degenerate
        assert "single frame" in est.reason

    def test_rank_deficient(self):
        """Test points on a 2D subspace of space-time are degenerate."""
        rows = [(0.0, y, 0.0, t) for y in np.linspace(-1, 1, 5) for t in (0.0, 0.1, 0.2)]
        est = estimate_st_normal(StampedPoint(np.zeros(3), 0.0), _stamped(np.array(rows)))
        assert est.degenerate

    def test_isotropic_blob_rejected(self, rng):
        """Test unseparated smallest eigenvalues are degenerate."""
        xyzt = rng.normal(size=(200, 4))
        xyzt[:, 3] = np.round(xyzt[:, 3] * 10) / 10
        est = estimate_st_normal(StampedPoint(np.zeros(3), 0.0), _stamped(xyzt), time_scale=1.0)
        assert est.degenerate


class TestTemporalAngle:
    """Test the temporal angle and stability labels."""

    @pytest.mark.parametrize(
        ("vector", "expected"),
        [([1, 0, 0, 0], 0.0), ([0, 0, 0, 1], np.pi / 2), ([1, 0, 0, 1], np.pi / 4),
         ([0, 0, -1, -1], np.pi / 4)],
    )
    def test_angle_values(self, vector, expected):
        """Test known angles."""
        assert temporal_angle(vector) == pytest.approx(expected)

    def test_zero_vector(self):
        """Test the angle of a zero vector is undefined."""
        with pytest.raises(ValueError):
            temporal_angle([0, 0, 0, 0])

    def test_threshold_range(self):
        """Test thresholds outside (0, pi/2) are rejected."""
        n = SpatioTemporalNormal(1.0, 0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            classify_stability(n, 0.0)
        with pytest.raises(ValueError):
            classify_stability(n, np.pi / 2)

    def test_degenerate_is_unstable(self):
        """Test missing normals are unstable."""
        assert classify_stability(None, THETA_THR) is StabilityLabel.UNSTABLE
        est = NormalEstimate(None, True, np.zeros(0), "few")
        assert classify_stability(est, THETA_THR) is StabilityLabel.UNSTABLE

    def test_boundary_is_stable(self):
        """Test an angle just below the threshold is stable."""
        angle = THETA_THR * 0.999
        n = SpatioTemporalNormal(np.cos(angle), 0.0, 0.0, np.sin(angle))
        assert classify_stability(n, THETA_THR) is StabilityLabel.STABLE


class TestBatch:
    """Test the vectorized normal pipeline against single fits."""

    def test_batch_matches_single(self, moving_wall):
        """Test batched fits equal single fits for each neighborhood."""
        hoods = [moving_wall(v, seed=i) for i, v in enumerate([0.0, 0.8, 2.0])]
        xyzt = np.stack(hoods)
        xyzt[:, :, 3] *= TIME_SCALE
        mask = np.ones(xyzt.shape[:2], dtype=bool)
        frame_ids = np.stack([np.repeat(np.arange(5), 20)] * 3)
        reference = np.tile([-1.0, 0.0, 0.0], (3, 1))
        normals, degenerate = batch_estimate_normals(xyzt, mask, frame_ids, reference)
        assert not degenerate.any()
        for row, hood in enumerate(hoods):
            single = estimate_st_normal(
                StampedPoint(np.zeros(3), 0.0), _stamped(hood), TIME_SCALE,
                sensor_origin=(-1.0, 0.0, 0.0),
            )
            assert np.allclose(normals[row], single.normal.as_array(), atol=1e-9)

    def test_mask_and_frames(self, moving_wall):
        """Test masked neighbors and single-frame neighborhoods are degenerate."""
        xyzt = moving_wall(0.0)[None].copy()
        frame_ids = np.repeat(np.arange(5), 20)[None]
        few = np.zeros((1, 100), dtype=bool)
        few[0, :5] = True
        _, degenerate = batch_estimate_normals(xyzt, few, frame_ids, np.array([[0, 0, 1.0]]))
        assert degenerate[0]
        one_frame = np.zeros_like(frame_ids)
        full = np.ones((1, 100), dtype=bool)
        _, degenerate = batch_estimate_normals(xyzt, full, one_frame, np.array([[0, 0, 1.0]]))
        assert degenerate[0]

    def test_batch_classify(self):
        """Test vectorized labels."""
        normals = np.array([[1.0, 0, 0, 0], [1.0, 0, 0, 1.0], [1.0, 0, 0, 0]])
        degenerate = np.array([False, False, True])
        labels = batch_classify(normals, degenerate, THETA_THR)
        assert labels.tolist() == [0, 1, 1]
        assert np.allclose(batch_temporal_angles(normals), [0.0, np.pi / 4, 0.0])


class TestInvariance:
    """Test properties that hold for any neighborhood."""

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    @pytest.mark.parametrize("velocity", [0.0, 0.4, 2.0])
    def test_rotation_rotates_spatial_part(self, moving_wall, seed, velocity):
        """Test rotating the points rotates (a, b, c) and keeps d and the angle."""
        rot = Rotation.random(random_state=seed)
        xyzt = moving_wall(velocity, seed=seed)
        sensor = np.array([-5.0, 0.3, 0.2])
        query = StampedPoint(np.zeros(3), 0.0)
        base = estimate_st_normal(query, _stamped(xyzt), TIME_SCALE, sensor_origin=sensor)

        turned = xyzt.copy()
        turned[:, :3] = rot.apply(xyzt[:, :3])
        moved = estimate_st_normal(
            query, _stamped(turned), TIME_SCALE, sensor_origin=rot.apply(sensor)
        )
        assert not base.degenerate
        assert not moved.degenerate
        n0, n1 = base.normal.as_array(), moved.normal.as_array()
        assert np.allclose(n1[:3], rot.apply(n0[:3]), atol=1e-9)
        assert n1[3] == pytest.approx(n0[3], abs=1e-9)
        assert temporal_angle(moved.normal) == pytest.approx(temporal_angle(base.normal), abs=1e-9)

    def test_static_scene_has_zero_temporal_component(self):
        """Test static simulated surfaces give near-zero temporal angles."""
        preset = get_preset("mover-dominated", seed=0, movers=False)
        lidar = replace(LIDAR_PRESETS["vlp16"], range_noise=0.0)
        mt = TemporalWindowMap()
        clouds = []
        # 2.0 s to 2.5 s: the ego is accelerating along x
        for index in range(20, 25):
            frame = generate_frame(index, preset.scene, lidar, preset.ego, seed=0)
            assert not frame.labels.any()
            rot, origins = preset.ego.poses(frame.scan.times)
            clouds.append((frame.scan.scan_end, rot.apply(frame.scan.points) + origins,
                           frame.scan.times))
        for frame_time, world, times in clouds[:-1]:
            mt.push_frame(frame_time, world, times)

        _, world, times = clouds[-1]
        ctx = ScanContext(world, times, mt, RegistrationConfig())
        normals, degenerate = ctx.normals_at(Pose.identity(), use_cache=False)
        angles = batch_temporal_angles(normals[~degenerate])
        assert angles.size > 500
        assert np.mean(angles < np.deg2rad(1.0)) >= 0.99
