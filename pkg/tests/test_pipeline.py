"""Tests for configuration, on-disk formats, the run drivers and the CLI."""

from __future__ import annotations

import json

import numpy as np
import pandas as pd
import pytest
import yaml

from dynlio.core.errors import ConfigError, DataFormatError, RegistrationDegeneracyError
from dynlio.core.geometry import Pose
from dynlio.evaluation.trajectory import Trajectory
from dynlio.odometry.estimator import RegistrationMode
from dynlio.odometry.preprocessing import ImuMeasurements
from dynlio.pipeline.cli import EXIT_CONFIG, EXIT_DATA, EXIT_DEGENERATE, EXIT_OK, main
from dynlio.pipeline.config import (
    PipelineConfig,
    config_from_dict,
    dump_config,
    load_config,
    parse_override,
    section_names,
)
from dynlio.pipeline.formats import (
    FRAME_HEADER,
    INDEX_FILE,
    DiagnosticsWriter,
    FrameRecord,
    append_labeled_map,
    decode_frame,
    encode_frame,
    labeled_map_frame,
    read_dataset,
    read_diagnostics,
    read_frame,
    read_imu_csv,
    read_labeled_map,
    read_tum,
    write_imu_csv,
    write_static_map,
    write_tum,
)
from dynlio.pipeline.runner import (
    run_bench,
    run_eval,
    run_odom,
    run_sim,
    score_labeled_map,
    summarize_bench,
)

SHORT = {"simulation": {"duration": 0.6}, "pipeline": {"n_bootstrap": 2}}


@pytest.fixture(scope="module")
def short_config():
    return config_from_dict(SHORT)


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory, short_config):
    return run_sim(short_config, tmp_path_factory.mktemp("sim") / "rich")


@pytest.fixture(scope="module")
def odom_run(tmp_path_factory, dataset_dir, short_config):
    return run_odom(dataset_dir, short_config, tmp_path_factory.mktemp("odom") / "run")


def _record(n=5, seed=0):
    gen = np.random.default_rng(seed)
    return FrameRecord(
        12.5,
        gen.uniform(-20, 20, size=(n, 3)),
        np.linspace(0.0, 0.099, n),
        np.arange(n, dtype=np.uint16) % 16,
        np.array([0, 1, 0, 255, 0][:n], dtype=np.uint8),
        np.array([0, 3, 0, 0, 0][:n], dtype=np.uint16),
    )


class TestConfig:
    """Defaults, YAML loading and overrides."""

    def test_defaults(self):
        """Defaults carry the documented constants."""
        config = PipelineConfig()
        assert config.normals.k_neighbors == 20
        assert config.normals.k_current == 5
        assert config.normals.theta_thr_deg == 5.7
        assert config.registration.huber_delta == 0.1
        assert config.registration.min_stable_points == 50
        assert config.scc.upsample_radius == 0.3
        assert config.scc_record.voxel_size == 0.5
        assert config.voxel_map.voxel_size == 1.0
        assert config.preprocessing.voxel_downsample_size == 0.25
        assert config.pipeline.n_bootstrap == 5
        assert section_names()[0] == "normals"

    def test_resolved_time_scale(self):
        """A null time scale is cell size over scan period."""
        assert PipelineConfig().resolved_time_scale(0.1) == pytest.approx(2.5)
        explicit = config_from_dict({"normals": {"time_scale": 4.0}})
        assert explicit.resolved_time_scale(0.1) == 4.0

    def test_registration_config(self):
        """Sections flatten into the estimator config."""
        reg = PipelineConfig().registration_config(0.1, "sequential")
        assert reg.theta_thr == pytest.approx(np.deg2rad(5.7))
        assert reg.time_scale == pytest.approx(2.5)
        assert reg.mode is RegistrationMode.SEQUENTIAL
        assert PipelineConfig().registration_config(0.1).mode is RegistrationMode.FULL

    def test_file_then_overrides(self, tmp_path):
        """Command-line overrides win over the file, which wins over defaults."""
        path = tmp_path / "cfg.yaml"
        path.write_text(
            yaml.safe_dump({"normals": {"k_neighbors": 12, "k_min": 6}, "scc": {"dbscan_eps": 0.7}})
        )
        config = load_config(path, ["normals.k_neighbors=15", "registration.mode=no-dynamic"])
        assert config.normals.k_neighbors == 15
        assert config.normals.k_min == 6
        assert config.scc.dbscan_eps == 0.7
        assert config.registration.mode == "no-dynamic"
        assert config.voxel_map.voxel_size == 1.0

    def test_int_accepted_for_float(self):
        """Whole numbers are accepted for float fields."""
        config = config_from_dict({"scc": {"max_box_edge": 10}})
        assert config.scc.max_box_edge == 10.0
        assert isinstance(config.scc.max_box_edge, float)

    def test_empty_section_ignored(self):
        """A section written with no keys keeps its defaults."""
        assert config_from_dict({"normals": None}) == PipelineConfig()

    @pytest.mark.parametrize(
        "data, match",
        [
            ({"bogus": {}}, "Unknown config section"),
            ({"normals": {"k_neighbours": 3}}, "Unknown config key normals.k_neighbours"),
            ({"normals": {"k_neighbors": "many"}}, "must be an integer"),
            ({"normals": {"k_neighbors": 2.5}}, "must be an integer"),
            ({"registration": {"huber_delta": True}}, "must be a number"),
            ({"registration": {"sticky_unstable": 1}}, "true or false"),
            ({"registration": {"huber_delta": None}}, "may not be null"),
            ({"registration": {"huber_delta": -1.0}}, "Invalid value"),
            ({"registration": {"mode": "fastest"}}, "Invalid value"),
            ({"normals": {"theta_thr_deg": 95.0}}, "below 90"),
            ({"scc": {"overlap_thr": 1.5}}, "Invalid value"),
            ({"simulation": {"preset": "moon"}}, "Unknown preset"),
            ({"normals": [1, 2]}, "must be a mapping"),
            ([1, 2], "mapping of sections"),
        ],
    )
    def test_invalid(self, data, match):
        """Bad sections, keys, types and values raise ConfigError."""
        with pytest.raises(ConfigError, match=match):
            config_from_dict(data)

    def test_nullable_fields(self):
        """Fields that default to null accept null."""
        config = config_from_dict({"normals": {"time_scale": None}, "simulation": {"duration": None}})
        assert config.normals.time_scale is None
        assert config.simulation.duration is None

    @pytest.mark.parametrize(
        "assignment, expected",
        [
            ("normals.k_neighbors=12", ("normals", "k_neighbors", 12)),
            ("registration.mode=full", ("registration", "mode", "full")),
            ("pipeline.abort_on_degenerate=true", ("pipeline", "abort_on_degenerate", True)),
            ("normals.time_scale=null", ("normals", "time_scale", None)),
        ],
    )
    def test_parse_override(self, assignment, expected):
        """Values are parsed as YAML scalars."""
        assert parse_override(assignment) == expected

    @pytest.mark.parametrize("assignment", ["normals.k_neighbors", "k_neighbors=3", "a.b.c=1"])
    def test_bad_override(self, assignment):
        """Overrides must look like section.key=value."""
        with pytest.raises(ConfigError):
            parse_override(assignment)

    def test_missing_file(self, tmp_path):
        """A missing config file is a config error."""
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.yaml")

    def test_malformed_yaml(self, tmp_path):
        """Unparseable YAML is a config error."""
        path = tmp_path / "bad.yaml"
        path.write_text("normals: [1, 2\n")
        with pytest.raises(ConfigError, match="Malformed YAML"):
            load_config(path)

    def test_dump_reloads(self, tmp_path):
        """A dumped config loads back to an equal config."""
        config = config_from_dict({"normals": {"k_neighbors": 11}, "simulation": {"seed": 7}})
        path = tmp_path / "dumped.yaml"
        path.write_text(dump_config(config))
        assert load_config(path) == config

    def test_replace(self):
        """replace validates and changes only the named keys."""
        config = PipelineConfig().replace(pipeline={"threads": 4})
        assert config.pipeline.threads == 4
        assert config.pipeline.n_bootstrap == 5
        with pytest.raises(ConfigError):
            PipelineConfig().replace(pipeline={"threads": 0})


class TestFrameFormat:
    """Binary frame records."""

    def test_encode_decode(self):
        """Decoded frames keep every field at float32 precision."""
        record = _record()
        back = decode_frame(encode_frame(record))
        assert back.frame_time == record.frame_time
        np.testing.assert_allclose(back.points, record.points, rtol=1e-6)
        np.testing.assert_allclose(back.t_offset, record.t_offset, atol=1e-7)
        np.testing.assert_array_equal(back.ring, record.ring)
        np.testing.assert_array_equal(back.label, record.label)
        np.testing.assert_array_equal(back.mover_id, record.mover_id)

    def test_empty_frame(self):
        """A frame without points is valid."""
        record = FrameRecord(1.0, np.zeros((0, 3)), [], [], [], [])
        assert len(decode_frame(encode_frame(record))) == 0

    def test_field_length_mismatch(self):
        """Every per-point field must match the point count."""
        with pytest.raises(DataFormatError, match="label"):
            FrameRecord(0.0, np.zeros((3, 3)), np.zeros(3), np.zeros(3), np.zeros(2), np.zeros(3))

    def test_truncated_header(self):
        """Fewer bytes than a header fail."""
        with pytest.raises(DataFormatError, match="truncated"):
            decode_frame(b"DYN")

    def test_bad_magic(self):
        """A wrong magic fails."""
        data = bytearray(encode_frame(_record()))
        data[:8] = b"NOTAFRAM"
        with pytest.raises(DataFormatError, match="bad magic"):
            decode_frame(bytes(data))

    def test_unsupported_version(self):
        """A newer version fails with a clear message."""
        data = encode_frame(_record())
        _, _, frame_time, count = FRAME_HEADER.unpack_from(data)
        bumped = FRAME_HEADER.pack(b"DYNLIOFR", 99, frame_time, count) + data[FRAME_HEADER.size:]
        with pytest.raises(DataFormatError, match="unsupported frame version 99"):
            decode_frame(bumped)

    def test_size_mismatch(self):
        """A body shorter than announced fails."""
        with pytest.raises(DataFormatError, match="announces 5 points"):
            decode_frame(encode_frame(_record())[:-3], "frame.frm")

    def test_missing_file(self, tmp_path):
        """Reading a missing frame is a data error."""
        with pytest.raises(DataFormatError, match="not found"):
            read_frame(tmp_path / "000000.frm")

    def test_to_scan(self):
        """Offsets become absolute times clipped to the sweep."""
        record = FrameRecord(
            2.0, np.ones((3, 3)), np.array([-0.01, 0.05, 0.2]), np.zeros(3), np.zeros(3),
            np.zeros(3),
        )
        scan = record.to_scan(0.1)
        np.testing.assert_allclose(scan.times, [2.0, 2.05, 2.1])
        assert scan.scan_start == 2.0
        assert scan.scan_end == pytest.approx(2.1)


class TestTextFormats:
    """TUM, IMU CSV, labeled maps and diagnostics."""

    def test_tum(self, tmp_path):
        """Trajectories survive a write and read at 1e-9 resolution."""
        traj = Trajectory(
            np.array([0.1, 0.2, 0.3]),
            tuple(Pose.from_rotvec([0.0, 0.1 * i, 0.2], [i, -i, 0.5]) for i in range(3)),
        )
        back = read_tum(write_tum(tmp_path / "traj.txt", traj))
        np.testing.assert_allclose(back.times, traj.times)
        for a, b in zip(back.poses, traj.poses):
            assert a.allclose(b, atol=1e-8)
        first = (tmp_path / "traj.txt").read_text().splitlines()[0].split()
        assert len(first) == 8

    def test_tum_comments(self, tmp_path):
        """Comment lines are skipped."""
        path = tmp_path / "traj.txt"
        path.write_text("# time tx ty tz qx qy qz qw\n1.0 0 0 0 0 0 0 1\n")
        assert len(read_tum(path)) == 1

    def test_tum_short_row(self, tmp_path):
        """Rows with missing columns fail."""
        path = tmp_path / "traj.txt"
        path.write_text("1.0 0 0 0 0 0 0 1\n2.0 1 2\n")
        with pytest.raises(DataFormatError, match="fewer than 8"):
            read_tum(path)

    def test_tum_missing(self, tmp_path):
        """A missing trajectory file is a data error."""
        with pytest.raises(DataFormatError, match="not found"):
            read_tum(tmp_path / "none.txt")

    def test_imu_csv(self, tmp_path):
        """The IMU stream survives a write and read."""
        times = np.linspace(0.0, 0.1, 21)
        imu = ImuMeasurements(times, np.full((21, 3), 0.01), np.tile([0.0, 0.0, 9.81], (21, 1)))
        back = read_imu_csv(write_imu_csv(tmp_path / "imu.csv", imu))
        np.testing.assert_allclose(back.times, times)
        np.testing.assert_allclose(back.accel, imu.accel)

    def test_imu_missing_columns(self, tmp_path):
        """An IMU file without the expected header fails."""
        path = tmp_path / "imu.csv"
        pd.DataFrame({"time": [0.0, 0.1], "gx": [0.0, 0.0]}).to_csv(path, index=False)
        with pytest.raises(DataFormatError, match="lacks columns"):
            read_imu_csv(path)

    def test_labeled_and_static_map(self, tmp_path):
        """Labeled rows append per frame; the static map keeps label 0."""
        path = tmp_path / "labeled_map.txt"
        with path.open("w") as f:
            append_labeled_map(f, labeled_map_frame(np.zeros((3, 3)), [0, 1, 0], 0))
            append_labeled_map(f, labeled_map_frame(np.ones((2, 3)), [1, 0], 1))
        labeled = read_labeled_map(path)
        assert labeled["frame"].tolist() == [0, 0, 0, 1, 1]
        assert labeled["index"].tolist() == [0, 1, 2, 0, 1]

        static_path = tmp_path / "static_map.txt"
        write_static_map(static_path, labeled)
        rows = static_path.read_text().splitlines()
        assert len(rows) == 3
        assert all(r.split()[3] == "0" for r in rows)

    def test_diagnostics(self, tmp_path):
        """Nested timing flattens to timing.<phase> columns."""
        path = tmp_path / "diagnostics.jsonl"
        with DiagnosticsWriter(path) as diag:
            diag.write({"frame": 0, "timing": {"total": 0.01}})
            diag.write({"frame": 1, "timing": {"total": 0.02}})
        df = read_diagnostics(path)
        assert df["frame"].tolist() == [0, 1]
        assert df["timing.total"].tolist() == [0.01, 0.02]

    def test_diagnostics_closed(self, tmp_path):
        """Writing outside the context manager fails."""
        with pytest.raises(RuntimeError, match="not open"):
            DiagnosticsWriter(tmp_path / "d.jsonl").write({})

    def test_diagnostics_invalid_json(self, tmp_path):
        """A corrupt line names its line number."""
        path = tmp_path / "diagnostics.jsonl"
        path.write_text('{"frame": 0}\n{oops\n')
        with pytest.raises(DataFormatError, match=":2:"):
            read_diagnostics(path)


class TestDataset:
    """Dataset directories written by run-sim."""

    def test_layout(self, dataset_dir):
        """A dataset holds frames, IMU, ground truth and metadata."""
        dataset = read_dataset(dataset_dir)
        assert len(dataset) == 6
        assert dataset.scan_period == pytest.approx(0.1)
        assert dataset.metadata["preset"] == "rich"
        assert len(dataset.ground_truth) == 6
        assert dataset.imu.times[-1] >= dataset.ground_truth.times[-1] - 1e-9
        frame = dataset.frame(0)
        assert len(frame) > 1000
        assert set(np.unique(frame.label)) <= {0, 1}

    def test_truth_at_scan_ends(self, dataset_dir):
        """Ground truth is stamped at the end of each sweep."""
        dataset = read_dataset(dataset_dir)
        np.testing.assert_allclose(
            dataset.ground_truth.times, dataset.index["frame_time"].to_numpy() + 0.1, atol=1e-8
        )

    def test_deterministic_across_threads(self, tmp_path, dataset_dir, short_config):
        """Generation threads do not change a single byte."""
        other = run_sim(short_config.replace(pipeline={"threads": 3}), tmp_path / "again")
        for path in sorted(p for p in dataset_dir.rglob("*") if p.is_file()):
            assert (other / path.relative_to(dataset_dir)).read_bytes() == path.read_bytes()

    def test_cache_reuse(self, tmp_path, tmp_cache, short_config):
        """A cached dataset is copied on the second request."""
        first = run_sim(short_config, tmp_path / "a", cache=tmp_cache)
        assert tmp_cache.get_cache_info()["datasets_count"] == 1
        second = run_sim(short_config, tmp_path / "b", cache=tmp_cache)
        assert (second / INDEX_FILE).read_bytes() == (first / INDEX_FILE).read_bytes()
        assert tmp_cache.get_cache_info()["datasets_count"] == 1

    def test_missing_directory(self, tmp_path):
        """Opening a missing dataset fails."""
        with pytest.raises(DataFormatError, match="not found"):
            read_dataset(tmp_path / "nowhere")

    def test_missing_scan_period(self, tmp_path):
        """Metadata must name the scan period."""
        (tmp_path / "dataset.yaml").write_text("seed: 0\n")
        with pytest.raises(DataFormatError, match="scan_period"):
            read_dataset(tmp_path)

    def test_index_count_mismatch(self, tmp_path, dataset_dir):
        """A frame whose point count disagrees with the index fails on read."""
        import shutil

        copy = tmp_path / "copy"
        shutil.copytree(dataset_dir, copy)
        index = pd.read_csv(copy / INDEX_FILE)
        index.loc[0, "n_points"] += 1
        index.to_csv(copy / INDEX_FILE, index=False)
        with pytest.raises(DataFormatError, match="index lists"):
            read_dataset(copy).frame(0)


class TestRunners:
    """Odometry, evaluation and benchmark drivers."""

    def test_odom_outputs(self, odom_run, dataset_dir):
        """Odometry writes one pose and one diagnostics record per frame."""
        traj = read_tum(odom_run["trajectory"])
        truth = read_dataset(dataset_dir).ground_truth
        assert len(traj) == 6
        np.testing.assert_allclose(traj.times, truth.times, atol=1e-9)
        diagnostics = read_diagnostics(odom_run["diagnostics"])
        assert diagnostics["bootstrap"].tolist() == [True, True, False, False, False, False]
        assert not diagnostics["degenerate"].any()
        assert "timing.total" in diagnostics.columns
        labeled = read_labeled_map(odom_run["labeled_map"])
        assert set(labeled["label"].unique()) <= {0, 1}
        assert load_config(odom_run["config"]).pipeline.n_bootstrap == 2

    def test_odom_tracks_truth(self, odom_run, dataset_dir):
        """The estimate stays close to ground truth on a short run."""
        traj = read_tum(odom_run["trajectory"])
        truth = read_dataset(dataset_dir).ground_truth
        err = np.linalg.norm(traj.positions - truth.positions, axis=1)
        assert err.max() < 0.2

    def test_odom_deterministic(self, tmp_path, odom_run, dataset_dir, short_config):
        """Repeated runs and other thread counts give identical outputs."""
        again = run_odom(dataset_dir, short_config, tmp_path / "again")
        threaded = run_odom(
            dataset_dir, short_config.replace(pipeline={"threads": 2}), tmp_path / "threads"
        )
        for kind in ("trajectory", "labeled_map", "static_map"):
            expected = odom_run[kind].read_bytes()
            assert again[kind].read_bytes() == expected
            assert threaded[kind].read_bytes() == expected

    def test_degenerate_continues(self, tmp_path, dataset_dir, short_config):
        """Without abort, an unregistrable frame warns and keeps the IMU prior."""
        config = short_config.replace(registration={"min_stable_points": 10**7})
        with pytest.warns(UserWarning, match="continuing on the IMU prior"):
            paths = run_odom(dataset_dir, config, tmp_path / "degenerate")
        diagnostics = read_diagnostics(paths["diagnostics"])
        assert diagnostics["degenerate"].tolist() == [False, False, True, True, True, True]
        assert len(read_tum(paths["trajectory"])) == 6

    def test_degenerate_aborts(self, tmp_path, dataset_dir, short_config):
        """With abort_on_degenerate the error propagates."""
        config = short_config.replace(
            registration={"min_stable_points": 10**7}, pipeline={"abort_on_degenerate": True}
        )
        with pytest.raises(RegistrationDegeneracyError):
            run_odom(dataset_dir, config, tmp_path / "abort")

    def test_eval(self, tmp_path, odom_run, dataset_dir):
        """Evaluation writes metrics, tables and a report."""
        out = tmp_path / "eval"
        metrics = run_eval(
            odom_run["trajectory"],
            dataset_dir / "groundtruth.txt",
            out,
            labeled_map_path=odom_run["labeled_map"],
            dataset_dir=dataset_dir,
            diagnostics_path=odom_run["diagnostics"],
        )
        assert 0.0 <= metrics["ate_rmse"] < 0.2
        assert metrics["n_poses"] == 6
        assert metrics["SA"] is not None
        assert "total" in metrics["timing_ms"]
        assert json.loads((out / "metrics.json").read_text())["n_poses"] == 6
        for name in ("ate_errors.csv", "frame_stats.csv", "timing_percentiles.csv", "report.html"):
            assert (out / name).exists()
        stats = pd.read_csv(out / "frame_stats.csv")
        assert {"frame", "stable_fraction", "SA", "DA", "HA"} <= set(stats.columns)

    def test_eval_needs_both_map_inputs(self, tmp_path, odom_run, dataset_dir):
        """Map scoring with only one of its inputs warns and is skipped."""
        with pytest.warns(UserWarning, match="needs both"):
            metrics = run_eval(
                odom_run["trajectory"], dataset_dir / "groundtruth.txt", tmp_path / "eval",
                labeled_map_path=odom_run["labeled_map"],
            )
        assert "SA" not in metrics

    def test_score_labeled_map_joins_by_index(self, dataset_dir):
        """Truth labels as predictions score perfectly."""
        dataset = read_dataset(dataset_dir)
        frames = []
        for i in range(len(dataset)):
            record = dataset.frame(i)
            keep = record.label != 255
            frames.append(
                labeled_map_frame(
                    record.points[keep], record.label[keep], i, np.flatnonzero(keep)
                )
            )
        score, per_frame = score_labeled_map(pd.concat(frames, ignore_index=True), dataset_dir)
        assert score.sa == pytest.approx(100.0)
        assert score.da in (None, pytest.approx(100.0))
        assert per_frame["frame"].tolist() == list(range(len(dataset)))

    def test_summarize_bench(self):
        """Medians skip failed runs; failures are counted per mode."""
        runs = pd.DataFrame(
            {
                "mode": ["full", "full", "full", "no-dynamic", "no-dynamic"],
                "rmse": [0.1, 0.3, float("inf"), 0.5, 0.7],
                "failed": [False, False, True, False, False],
            }
        )
        summary = summarize_bench(runs).set_index("mode")
        assert summary.loc["full", "median_rmse"] == pytest.approx(0.2)
        assert summary.loc["full", "n_failed"] == 1
        assert summary.loc["no-dynamic", "median_rmse"] == pytest.approx(0.6)
        assert summary.loc["no-dynamic", "n_runs"] == 2

    @pytest.mark.slow
    def test_bench(self, tmp_path, short_config):
        """The ablation runs every mode per seed and writes its tables."""
        runs = run_bench(short_config, tmp_path / "bench", seeds=[0, 1],
                         modes=["full", "no-dynamic"])
        assert len(runs) == 4
        assert set(runs["mode"]) == {"full", "no-dynamic"}
        assert not runs["failed"].any()
        for name in ("ablation.csv", "ablation_summary.csv", "report.html"):
            assert (tmp_path / "bench" / name).exists()


def _median_rmse(summary: pd.DataFrame, mode: str) -> float:
    """Median RMSE of a mode, infinite when every run of it failed."""
    value = summary.set_index("mode").loc[mode, "median_rmse"]
    return float("inf") if pd.isna(value) else float(value)


@pytest.mark.slow
class TestAcceptance:
    """Scenario-scale checks of accuracy and labeling on simulated presets."""

    @pytest.fixture(scope="class")
    def movers_run(self, tmp_path_factory):
        config = config_from_dict(
            {"simulation": {"preset": "mover-dominated", "duration": 4.0}}
        )
        root = tmp_path_factory.mktemp("movers")
        data_dir = run_sim(config, root / "data")
        return data_dir, run_odom(data_dir, config, root / "run")

    def test_ablation_ordering_with_movers(self, tmp_path):
        """Per-iteration labels give the lowest median error among movers."""
        config = config_from_dict(
            {"simulation": {"preset": "mover-dominated", "duration": 4.0}}
        )
        runs = run_bench(config, tmp_path / "bench", seeds=[0, 1])
        assert len(runs) == 6
        summary = summarize_bench(runs)
        full = _median_rmse(summary, "full")
        assert np.isfinite(full)
        assert full <= _median_rmse(summary, "no-dynamic")
        assert full <= _median_rmse(summary, "sequential")

    def test_static_scene_non_regression(self, tmp_path):
        """Without movers, dynamic gating costs at most a factor two in error."""
        config = config_from_dict(
            {"simulation": {"preset": "rich", "duration": 4.0, "movers": False}}
        )
        runs = run_bench(config, tmp_path / "bench", seeds=[0, 1],
                         modes=["full", "no-dynamic"])
        summary = summarize_bench(runs)
        full = _median_rmse(summary, "full")
        no_dynamic = _median_rmse(summary, "no-dynamic")
        assert np.isfinite(no_dynamic)
        assert full <= 2.0 * no_dynamic

    def test_map_scores_with_movers(self, movers_run):
        """Pooled static and dynamic accuracy once the static record is warm."""
        data_dir, paths = movers_run
        labeled = read_labeled_map(paths["labeled_map"])
        # first second: bootstrap and an empty static record
        warm = labeled.loc[labeled["frame"] >= 10]
        score, per_frame = score_labeled_map(warm, data_dir)
        assert per_frame["frame"].min() == 10
        assert score.n_dynamic > 0
        assert score.sa >= 95.0
        assert score.da >= 80.0

    def test_no_movers_few_dynamic_labels(self, tmp_path):
        """A scene without movers ends with at most 1 % dynamic points."""
        config = config_from_dict(
            {"simulation": {"preset": "mover-dominated", "duration": 3.0, "movers": False}}
        )
        data_dir = run_sim(config, tmp_path / "data")
        paths = run_odom(data_dir, config, tmp_path / "run")
        labeled = read_labeled_map(paths["labeled_map"])
        assert len(labeled) > 0
        assert (labeled["label"] == 1).mean() <= 0.01


class TestCli:
    """Subcommands and exit codes."""

    def test_config_dump(self, tmp_path):
        """config --out writes the effective YAML with overrides applied."""
        out = tmp_path / "effective.yaml"
        code = main(["--quiet", "config", "--out", str(out), "--normals.k_neighbors", "9"])
        assert code == EXIT_OK
        assert load_config(out).normals.k_neighbors == 9

    def test_config_stdout(self, capsys):
        """config prints YAML when no file is given."""
        assert main(["--quiet", "config", "--dump"]) == EXIT_OK
        assert yaml.safe_load(capsys.readouterr().out)["normals"]["k_neighbors"] == 20

    def test_presets(self, capsys):
        """presets lists every scenario and lidar."""
        assert main(["presets"]) == EXIT_OK
        out = capsys.readouterr().out
        for name in ("rich", "degenerate-corridor", "mover-dominated", "vlp16"):
            assert name in out

    def test_bad_override_exit_code(self, tmp_path):
        """A malformed value exits with the config code."""
        code = main(["--quiet", "config", "--out", str(tmp_path / "c.yaml"),
                     "--normals.k_neighbors", "many"])
        assert code == EXIT_CONFIG

    def test_unknown_config_key_exit_code(self, tmp_path):
        """An unknown key in the file exits with the config code."""
        path = tmp_path / "cfg.yaml"
        path.write_text("normals:\n  k_neighbours: 3\n")
        assert main(["--quiet", "config", "--dump", "--config", str(path)]) == EXIT_CONFIG

    def test_missing_dataset_exit_code(self, tmp_path):
        """A missing dataset exits with the data code."""
        code = main(["--quiet", "run-odom", str(tmp_path / "none"), "--out", str(tmp_path / "o")])
        assert code == EXIT_DATA

    def test_missing_truth_exit_code(self, tmp_path, odom_run):
        """A missing truth file exits with the data code."""
        code = main([
            "--quiet", "run-eval", "--estimate", str(odom_run["trajectory"]),
            "--truth", str(tmp_path / "none.txt"), "--out", str(tmp_path / "e"),
        ])
        assert code == EXIT_DATA

    def test_degenerate_exit_code(self, tmp_path, dataset_dir):
        """An aborted registration exits with the degeneracy code."""
        code = main([
            "--quiet", "run-odom", str(dataset_dir), "--out", str(tmp_path / "o"),
            "--pipeline.n_bootstrap", "1", "--registration.min_stable_points", "10000000",
            "--pipeline.abort_on_degenerate", "true",
        ])
        assert code == EXIT_DEGENERATE

    def test_sim_odom_eval(self, tmp_path, capsys):
        """The three stages chain through the command line."""
        data = tmp_path / "data"
        run = tmp_path / "run"
        assert main(["--quiet", "run-sim", "--out", str(data), "--preset", "rich",
                     "--seed", "1", "--simulation.duration", "0.3"]) == EXIT_OK
        assert main(["--quiet", "run-odom", str(data), "--out", str(run), "--mode",
                     "no-dynamic", "--pipeline.n_bootstrap", "1"]) == EXIT_OK
        assert load_config(run / "config.yaml").registration.mode == "no-dynamic"
        assert main([
            "--quiet", "run-eval", "--estimate", str(run / "trajectory.txt"),
            "--truth", str(data / "groundtruth.txt"), "--out", str(tmp_path / "eval"),
        ]) == EXIT_OK
        assert "ATE RMSE" in capsys.readouterr().out

    def test_unknown_subcommand(self):
        """argparse rejects unknown subcommands."""
        with pytest.raises(SystemExit):
            main(["fly"])
