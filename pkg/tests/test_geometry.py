"""Tests for poses, stamped points and geometric helpers."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from dynlio.core.geometry import (
    BoundingBox,
    Pose,
    SpatioTemporalNormal,
    StampedPoint,
    SymMat4,
    as_points,
    as_vec3,
    skew,
    so3_exp,
    so3_log,
    stack_stamped,
)
from dynlio.core.utils import pack_keys, validate_fraction, validate_positive, voxel_keys


class TestVectors:
    """Test input conversion helpers."""

    def test_as_vec3(self):
        """Test conversion to a 3-vector."""
        assert np.array_equal(as_vec3([1, 2, 3]), [1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            as_vec3([1, 2])
        with pytest.raises(ValueError):
            as_vec3([1, np.nan, 3])

    def test_as_points(self):
        """Test conversion to an (N, 3) array."""
        assert as_points([]).shape == (0, 3)
        assert as_points([1, 2, 3]).shape == (1, 3)
        with pytest.raises(ValueError):
            as_points(np.zeros((4, 2)))

    def test_skew_matches_cross(self):
        """Test [v]x u == v x u."""
        v, u = np.array([0.3, -1.2, 2.0]), np.array([1.0, 0.5, -0.7])
        assert np.allclose(skew(v) @ u, np.cross(v, u))

    def test_exp_log_inverse(self):
        """Test the exponential and logarithm maps invert each other."""
        rotvec = np.array([0.1, -0.4, 0.25])
        assert np.allclose(so3_log(so3_exp(rotvec)), rotvec)


class TestPose:
    """Test rigid transforms."""

    def test_identity(self):
        """Test the identity leaves points unchanged."""
        pts = np.array([[1.0, 2.0, 3.0], [-1.0, 0.0, 4.0]])
        assert np.allclose(Pose.identity().apply(pts), pts)

    def test_quaternion_canonical_hemisphere(self):
        """Test w is kept non-negative."""
        pose = Pose(np.array([0.0, 0.0, 0.0, -1.0]), np.zeros(3))
        assert pose.quat[3] == pytest.approx(1.0)

    def test_invalid_quaternion(self):
        """Test a zero quaternion is rejected."""
        with pytest.raises(ValueError):
            Pose(np.zeros(4), np.zeros(3))

    def test_compose_matches_matrices(self):
        """Test composition agrees with homogeneous matrix products."""
        a = Pose.from_rotvec([0.1, 0.2, -0.3], [1.0, 2.0, 3.0])
        b = Pose.from_rotvec([-0.5, 0.0, 0.4], [0.0, -1.0, 0.5])
        assert np.allclose((a @ b).as_matrix(), a.as_matrix() @ b.as_matrix())

    def test_inverse(self):
        """Test T^-1 T is the identity."""
        pose = Pose.from_rotvec([0.3, -0.1, 0.7], [4.0, -2.0, 1.0])
        assert (pose.inverse() @ pose).allclose(Pose.identity(), atol=1e-12)

    def test_from_matrix_round_trip(self):
        """Test a pose survives conversion to a matrix and back."""
        pose = Pose.from_rotvec([0.2, 0.1, 0.0], [1.0, 0.0, -1.0])
        assert Pose.from_matrix(pose.as_matrix()).allclose(pose, atol=1e-12)

    def test_retract_right_perturbation(self):
        """Test rotation is perturbed on the right and translation additively."""
        pose = Pose.from_rotvec([0.0, 0.0, 0.5], [1.0, 1.0, 0.0])
        delta = np.array([0.0, 0.1, 0.0, 0.5, 0.0, 0.0])
        moved = pose.retract(delta)
        expected = pose.rotation * Rotation.from_rotvec([0.0, 0.1, 0.0])
        assert np.allclose(moved.rotation_matrix, expected.as_matrix())
        assert np.allclose(moved.translation, [1.5, 1.0, 0.0])

    def test_distance_to(self):
        """Test angular and translational distances."""
        a = Pose.identity()
        b = Pose.from_rotvec([0.0, 0.0, 0.25], [3.0, 4.0, 0.0])
        angle, dist = a.distance_to(b)
        assert angle == pytest.approx(0.25)
        assert dist == pytest.approx(5.0)


class TestStampedAndPacked:
    """Test stamped points, packed matrices and normals."""

    def test_stack_stamped(self):
        """Test splitting stamped points into arrays."""
        pts = [StampedPoint(np.array([1.0, 2.0, 3.0]), 0.5),
               StampedPoint(np.array([0.0, 0.0, 1.0]), 0.6)]
        positions, times = stack_stamped(pts)
        assert positions.shape == (2, 3)
        assert np.array_equal(times, [0.5, 0.6])
        assert stack_stamped([])[0].shape == (0, 3)

    def test_stack_stamped_rejects_nan(self):
        """Test non-finite times are rejected."""
        with pytest.raises(ValueError):
            stack_stamped([StampedPoint(np.zeros(3), float("nan"))])

    def test_symmat4_round_trip(self, rng):
        """Test packing keeps the full symmetric matrix."""
        a = rng.normal(size=(4, 4))
        m = a + a.T
        packed = SymMat4.from_array(m)
        assert packed.entries.shape == (10,)
        assert np.allclose(packed.to_array(), m)
        assert packed.trace == pytest.approx(np.trace(m))

    def test_symmat4_wrong_size(self):
        """Test the packed form needs exactly 10 entries."""
        with pytest.raises(ValueError):
            SymMat4(np.zeros(9))

    def test_normal_parts(self):
        """Test spatial and full views of a space-time normal."""
        n = SpatioTemporalNormal.from_array([0.6, 0.0, 0.8, 0.0])
        assert np.array_equal(n.spatial, [0.6, 0.0, 0.8])
        assert n.as_array().shape == (4,)


class TestBoundingBox:
    """Test axis-aligned boxes."""

    def test_from_points(self):
        """Test the tight box of a point set."""
        box = BoundingBox.from_points([[0, 0, 0], [2, 1, 3], [1, -1, 1]])
        assert np.array_equal(box.extent, [2.0, 2.0, 3.0])
        assert box.volume == pytest.approx(12.0)
        assert box.max_edge == pytest.approx(3.0)

    def test_contains_closed(self):
        """Test points on the boundary are inside."""
        box = BoundingBox(np.zeros(3), np.ones(3))
        mask = box.contains([[1.0, 1.0, 1.0], [0.5, 0.5, 1.01]])
        assert mask.tolist() == [True, False]

    def test_empty(self):
        """Test an empty point set cannot be bounded."""
        with pytest.raises(ValueError):
            BoundingBox.from_points(np.zeros((0, 3)))


class TestUtils:
    """Test validation and voxel key helpers."""

    @pytest.mark.parametrize("value", [0.0, -1.0, float("inf"), float("nan")])
    def test_validate_positive_rejects(self, value):
        """Test non-positive or non-finite values are rejected."""
        with pytest.raises(ValueError):
            validate_positive(value, "x")

    def test_validate_fraction(self):
        """Test the open unit interval."""
        assert validate_fraction(0.25, "r") == 0.25
        with pytest.raises(ValueError):
            validate_fraction(1.0, "r")

    def test_voxel_keys_floor(self):
        """Test negative coordinates round down."""
        keys = voxel_keys(np.array([[-0.1, 0.0, 0.99]]), 0.5)
        assert keys.tolist() == [[-1, 0, 1]]

    def test_pack_keys_unique(self):
        """Test distinct keys pack to distinct codes."""
        keys = np.array([[0, 0, 0], [0, 0, 1], [0, 1, 0], [1, 0, 0], [-1, -1, -1]])
        assert len(np.unique(pack_keys(keys))) == len(keys)

    def test_pack_keys_out_of_range(self):
        """Test indices beyond the packable range are rejected."""
        with pytest.raises(ValueError):
            pack_keys(np.array([[1 << 21, 0, 0]]))
