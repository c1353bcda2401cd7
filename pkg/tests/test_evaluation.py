"""Tests for trajectory error and map label scoring."""

from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from dynlio.core.errors import AlignmentError, AssociationError
from dynlio.core.geometry import Pose
from dynlio.evaluation import (
    MapScore,
    MetricsTableStyler,
    PosePair,
    Trajectory,
    associate,
    ate_rmse,
    create_metrics_table,
    evaluate_ate,
    harmonic_accuracy,
    map_scores,
    pooled_scores,
    position_errors,
    umeyama_align,
    write_html_report,
)


def _helix(n: int = 40, seed: int = 0) -> Trajectory:
    gen = np.random.default_rng(seed)
    t = np.linspace(0.0, 4.0, n)
    pos = np.column_stack([2.0 * np.cos(t), 2.0 * np.sin(t), 0.3 * t])
    rotvecs = gen.normal(scale=0.2, size=(n, 3))
    return Trajectory(t, tuple(Pose.from_rotvec(r, p) for r, p in zip(rotvecs, pos)))


class TestTrajectory:
    """Construction and accessors."""

    def test_from_arrays(self):
        """Arrays round into poses with positions and quaternions preserved."""
        pos = np.arange(9, dtype=float).reshape(3, 3)
        quats = np.tile([0.0, 0.0, 0.0, 1.0], (3, 1))
        traj = Trajectory.from_arrays([0.0, 0.1, 0.2], pos, quats)
        assert len(traj) == 3
        np.testing.assert_allclose(traj.positions, pos)
        np.testing.assert_allclose(traj.quaternions, quats)

    def test_from_samples_and_iter(self):
        """Iteration yields (time, pose) pairs in order."""
        samples = [(0.0, Pose.identity()), (1.0, Pose.from_rotvec([0, 0, 0.1], [1, 0, 0]))]
        traj = Trajectory.from_samples(samples)
        out = list(traj)
        assert [t for t, _ in out] == [0.0, 1.0]
        assert out[1][1].allclose(samples[1][1])

    def test_length_mismatch(self):
        """Times and poses must pair up."""
        with pytest.raises(ValueError, match="timestamps"):
            Trajectory(np.array([0.0, 1.0]), (Pose.identity(),))

    def test_non_increasing_times(self):
        """Timestamps must strictly increase."""
        with pytest.raises(ValueError, match="strictly increasing"):
            Trajectory(np.array([0.0, 0.0]), (Pose.identity(), Pose.identity()))

    def test_empty(self):
        """An empty trajectory has empty position arrays."""
        traj = Trajectory(np.zeros(0), ())
        assert traj.positions.shape == (0, 3)
        assert traj.quaternions.shape == (0, 4)

    def test_transformed(self):
        """A world-side transform moves every position."""
        traj = _helix(5)
        shift = Pose.from_rotvec([0, 0, 0], [1.0, -2.0, 0.5])
        np.testing.assert_allclose(
            traj.transformed(shift).positions, traj.positions + [1.0, -2.0, 0.5]
        )


class TestAssociate:
    """Nearest-timestamp pairing."""

    def test_exact_times(self):
        """Identical timestamps pair one to one."""
        traj = _helix(10)
        pairs = associate(traj, traj)
        assert len(pairs) == 10
        for pair in pairs:
            assert pair.estimate is pair.reference

    def test_nearest_with_offset(self):
        """A small offset pairs each estimate with the nearest reference."""
        ref = _helix(10)
        est = Trajectory(ref.times + 0.004, ref.poses)
        pairs = associate(est, ref, max_dt=0.01)
        assert len(pairs) == 10
        for pair, expected in zip(pairs, ref.poses):
            assert pair.reference is expected

    def test_drops_far_samples(self):
        """Estimates with no reference within max_dt are dropped."""
        ref = Trajectory(np.array([0.0, 1.0]), (Pose.identity(), Pose.identity()))
        est = Trajectory(np.array([0.0, 0.5, 1.005]), (Pose.identity(),) * 3)
        pairs = associate(est, ref, max_dt=0.01)
        assert [p.time for p in pairs] == [0.0, 1.005]

    def test_tie_prefers_earlier_reference(self):
        """An estimate midway between two references pairs with the earlier one."""
        early = Pose.from_rotvec([0, 0, 0], [1.0, 0, 0])
        late = Pose.from_rotvec([0, 0, 0], [2.0, 0, 0])
        ref = Trajectory(np.array([0.25, 0.75]), (early, late))
        est = Trajectory(np.array([0.5]), (Pose.identity(),))
        pairs = associate(est, ref, max_dt=0.3)
        assert pairs[0].reference is early

    def test_outside_reference_span(self):
        """Estimates before and after the reference clamp to its ends."""
        first = Pose.from_rotvec([0, 0, 0], [1.0, 0, 0])
        last = Pose.from_rotvec([0, 0, 0], [3.0, 0, 0])
        ref = Trajectory(np.array([1.0, 2.0]), (first, last))
        est = Trajectory(np.array([0.995, 2.005]), (Pose.identity(),) * 2)
        pairs = associate(est, ref, max_dt=0.01)
        assert pairs[0].reference is first
        assert pairs[1].reference is last

    def test_no_overlap_raises(self):
        """Disjoint time spans fail with a message naming both spans."""
        ref = _helix(5)
        est = Trajectory(ref.times + 100.0, ref.poses)
        with pytest.raises(AssociationError, match="No timestamps"):
            associate(est, ref)

    def test_empty_raises(self):
        """Associating an empty trajectory fails."""
        with pytest.raises(AssociationError, match="empty"):
            associate(Trajectory(np.zeros(0), ()), _helix(5))

    @pytest.mark.parametrize("max_dt", [0.0, -0.1])
    def test_bad_max_dt(self, max_dt):
        """max_dt must be positive."""
        traj = _helix(5)
        with pytest.raises(ValueError, match="max_dt"):
            associate(traj, traj, max_dt=max_dt)


class TestUmeyama:
    """Closed-form rigid alignment."""

    def test_recovers_known_transform(self):
        """Aligning a rigidly moved copy returns the inverse motion."""
        ref = _helix(30)
        motion = Pose.from_rotvec([0.1, -0.3, 0.7], [4.0, -1.0, 2.0])
        est = ref.transformed(motion)
        alignment = umeyama_align(associate(est, ref))
        assert alignment.allclose(motion.inverse(), atol=1e-9)

    def test_identity_for_identical(self):
        """Identical trajectories align with the identity."""
        traj = _helix(20)
        assert umeyama_align(associate(traj, traj)).allclose(Pose.identity(), atol=1e-9)

    def test_no_reflection(self):
        """A mirrored cloud still yields a proper rotation."""
        gen = np.random.default_rng(5)
        est = gen.normal(size=(20, 3))
        ref = est * [1.0, 1.0, -1.0]
        pairs = [
            PosePair(float(i), Pose(translation=e), Pose(translation=r))
            for i, (e, r) in enumerate(zip(est, ref))
        ]
        rot = umeyama_align(pairs).rotation_matrix
        assert np.linalg.det(rot) == pytest.approx(1.0)

    def test_too_few_pairs(self):
        """Two pairs cannot fix a rigid transform."""
        traj = _helix(2)
        with pytest.raises(AlignmentError, match="at least 3"):
            umeyama_align(associate(traj, traj))

    def test_collinear_positions(self):
        """Positions along a line leave a rotation unobservable."""
        poses = tuple(Pose(translation=[float(i), 0.0, 0.0]) for i in range(6))
        traj = Trajectory(np.arange(6, dtype=float), poses)
        with pytest.raises(AlignmentError, match="collinear"):
            umeyama_align(associate(traj, traj))


class TestAte:
    """Absolute trajectory error."""

    def test_identical_is_zero(self):
        """An identical trajectory has zero error."""
        traj = _helix(25)
        result = evaluate_ate(traj, traj)
        assert result.rmse == pytest.approx(0.0, abs=1e-9)
        assert len(result.pairs) == 25

    def test_rigid_offset_is_zero_after_alignment(self):
        """A rigidly moved estimate scores zero once aligned."""
        ref = _helix(25)
        est = ref.transformed(Pose.from_rotvec([0, 0, 1.2], [10.0, 3.0, -1.0]))
        assert evaluate_ate(est, ref).rmse == pytest.approx(0.0, abs=1e-9)

    def test_known_error(self):
        """A constant 0.1 m offset on one axis without alignment gives RMSE 0.1."""
        ref = _helix(10)
        est = ref.transformed(Pose(translation=[0.1, 0.0, 0.0]))
        pairs = associate(est, ref)
        np.testing.assert_allclose(position_errors(pairs), 0.1)
        assert ate_rmse(pairs) == pytest.approx(0.1)

    def test_rmse_formula(self):
        """RMSE is the root of the mean squared per-pose error."""
        ref = _helix(4)
        offsets = [0.0, 0.1, 0.2, 0.3]
        est = Trajectory(
            ref.times,
            tuple(Pose(p.quat, p.translation + [0.0, 0.0, d]) for p, d in zip(ref.poses, offsets)),
        )
        expected = np.sqrt(np.mean(np.square(offsets)))
        assert ate_rmse(associate(est, ref)) == pytest.approx(expected)

    def test_alignment_does_not_hide_noise(self):
        """Random noise survives alignment with a comparable RMSE."""
        ref = _helix(200)
        gen = np.random.default_rng(9)
        noise = gen.normal(scale=0.05, size=(200, 3))
        est = Trajectory(
            ref.times, tuple(Pose(p.quat, p.translation + n) for p, n in zip(ref.poses, noise))
        )
        rmse = evaluate_ate(est, ref).rmse
        assert 0.06 < rmse < 0.1

    def test_empty_pairs(self):
        """RMSE of nothing is an error."""
        with pytest.raises(ValueError, match="at least one"):
            ate_rmse([])


class TestMapScores:
    """Static, dynamic and harmonic accuracy."""

    def test_counts(self):
        """Confusion counts and recalls follow the label arrays."""
        truth = np.array([0, 0, 0, 0, 1, 1])
        pred = np.array([0, 0, 0, 1, 1, 0])
        score = map_scores(pred, truth)
        assert score == MapScore(true_static=3, false_dynamic=1, true_dynamic=1, false_static=1)
        assert score.sa == pytest.approx(75.0)
        assert score.da == pytest.approx(50.0)
        assert score.ha == pytest.approx(2 * 75.0 * 50.0 / 125.0)

    def test_perfect(self):
        """Perfect labels score 100 everywhere."""
        truth = np.array([0, 1, 0, 1])
        score = map_scores(truth, truth)
        assert (score.sa, score.da, score.ha) == (100.0, 100.0, 100.0)

    def test_ignored_truth_values(self):
        """Unlabeled truth entries do not count."""
        truth = np.array([0, 255, 1, 7])
        pred = np.array([0, 1, 1, 1])
        score = map_scores(pred, truth)
        assert score.n_static == 1
        assert score.n_dynamic == 1

    def test_missing_class_is_none(self):
        """With no dynamic truth, DA and HA are undefined."""
        score = map_scores(np.array([0, 1]), np.array([0, 0]))
        assert score.sa == pytest.approx(50.0)
        assert score.da is None
        assert score.ha is None

    def test_length_mismatch(self):
        """Label arrays must match in length."""
        with pytest.raises(ValueError, match="mismatch"):
            map_scores(np.zeros(3), np.zeros(4))

    @pytest.mark.parametrize(
        "sa, da, expected",
        [(100.0, 100.0, 100.0), (0.0, 0.0, 0.0), (100.0, 0.0, 0.0), (90.0, 60.0, 72.0)],
    )
    def test_harmonic_accuracy(self, sa, da, expected):
        """HA is the harmonic mean of SA and DA."""
        assert harmonic_accuracy(sa, da) == pytest.approx(expected)

    def test_harmonic_accuracy_undefined(self):
        """An undefined input makes HA undefined."""
        assert harmonic_accuracy(None, 50.0) is None

    def test_pooled_counts(self):
        """Pooling sums counts rather than averaging percentages."""
        a = MapScore(true_static=90, false_dynamic=10, true_dynamic=1, false_static=0)
        b = MapScore(true_static=10, false_dynamic=0, true_dynamic=0, false_static=9)
        total = pooled_scores([a, b])
        assert total == a + b
        assert total.sa == pytest.approx(100.0)
        assert total.da == pytest.approx(10.0)
        assert pooled_scores([]) == MapScore()

    def test_to_dict(self):
        """Serialized scores carry counts and percentages."""
        out = MapScore(1, 1, 1, 1).to_dict()
        assert out["true_static"] == 1
        assert out["SA"] == pytest.approx(50.0)
        assert out["HA"] == pytest.approx(50.0)


class TestReport:
    """HTML metric tables."""

    @pytest.fixture
    def results(self):
        return pd.DataFrame(
            {
                "mode": ["full", "no-dynamic", "sequential"],
                "ate_rmse": [0.12, 0.91, 0.15],
                "HA": [92.5, None, 90.1],
                "failed": [False, True, False],
            }
        )

    def test_table_html(self, results):
        """The table renders the caption, modes and the missing-value marker."""
        html = create_metrics_table(
            results, "ATE", lower_is_better=["ate_rmse"], higher_is_better=["HA"]
        ).to_html()
        assert "ATE" in html
        assert "no-dynamic" in html
        assert "0.120" in html
        assert ">-<" in html

    def test_failure_rows_shaded(self, results):
        """Failed rows get the failure background."""
        html = MetricsTableStyler(results).with_failures().to_html()
        assert "#f8d7da" in html

    def test_missing_column_warns(self, results):
        """Highlighting an absent column warns and leaves the table usable."""
        with pytest.warns(UserWarning, match="not found"):
            styler = MetricsTableStyler(results).with_best("missing")
        assert "full" in styler.to_html()

    def test_write_report(self, results, tmp_path):
        """Several tables land in one standalone page."""
        tables = {
            "Trajectory": create_metrics_table(results, lower_is_better=["ate_rmse"]),
            "Map": create_metrics_table(results[["mode", "HA"]], higher_is_better=["HA"]),
        }
        out = write_html_report(tables, tmp_path / "report.html", title="bench")
        text = out.read_text(encoding="utf-8")
        assert text.startswith("<!DOCTYPE html>")
        assert "<h2>Trajectory</h2>" in text
        assert "<h2>Map</h2>" in text
        assert "<title>bench</title>" in text
