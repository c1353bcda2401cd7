"""End-to-end drivers behind the CLI subcommands."""

from __future__ import annotations

import json
import logging
import shutil
import time
import warnings
from contextlib import ExitStack
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np
import pandas as pd

from dynlio.core.cache import DatasetCache
from dynlio.core.errors import RegistrationDegeneracyError
from dynlio.core.geometry import Pose, StabilityLabel
from dynlio.data.presets import get_lidar, get_preset
from dynlio.evaluation.report import create_metrics_table, write_html_report
from dynlio.evaluation.scores import MapScore, map_scores, pooled_scores
from dynlio.evaluation.trajectory import Trajectory, evaluate_ate
from dynlio.maps.temporal import TemporalWindowMap
from dynlio.maps.voxel import PlaneVoxelMap, StaticVoxelRecord
from dynlio.odometry.estimator import (
    BootstrapFrame,
    RegistrationMode,
    classify_scan,
    initialize_maps,
    prior_information,
    register_scan,
)
from dynlio.odometry.preprocessing import (
    ImuMeasurements,
    NavState,
    RawScan,
    deskew_to_scan_end,
    gravity_aligned_state,
    propagate,
    voxel_downsample_indices,
)
from dynlio.odometry.scc import FinalLabel, spatial_consistency_check, update_static_record
from dynlio.simulation.generator import generate_sequence

from .config import PipelineConfig, dump_config
from .formats import (
    DiagnosticsWriter,
    append_labeled_map,
    labeled_map_frame,
    read_dataset,
    read_diagnostics,
    read_labeled_map,
    read_tum,
    write_dataset,
    write_static_map,
    write_tum,
)

logger = logging.getLogger(__name__)

TRAJECTORY_FILE = "trajectory.txt"
LABELED_MAP_FILE = "labeled_map.txt"
STATIC_MAP_FILE = "static_map.txt"
DIAGNOSTICS_FILE = "diagnostics.jsonl"
USED_CONFIG_FILE = "config.yaml"


# --- run-sim ---------------------------------------------------------------


def run_sim(
    config: PipelineConfig, out_dir: str | Path, cache: DatasetCache | None = None
) -> Path:
    """Generate the configured preset and write it as a dataset directory.

    With a ``cache``, a matching cached dataset is copied instead of
    regenerated, and fresh output is stored in the cache.
    """
    sim = config.simulation
    preset = get_preset(sim.preset, seed=sim.seed, movers=sim.movers)
    lidar = get_lidar(sim.lidar)
    duration = sim.duration if sim.duration is not None else preset.duration
    out = Path(out_dir)
    key = {"seed": sim.seed, "duration": duration, "lidar": sim.lidar, "movers": sim.movers}

    if cache is not None and cache.has(sim.preset, **key):
        logger.info("Using cached dataset for %s %s", sim.preset, key)
        shutil.copytree(cache.path_for(sim.preset, **key), out, dirs_exist_ok=True)
        return out

    dataset = generate_sequence(
        preset.scene, lidar, preset.ego, preset.imu, duration, sim.seed,
        threads=config.pipeline.threads,
    )
    metadata = {
        "preset": sim.preset,
        "description": preset.description,
        "lidar_name": sim.lidar,
        "lidar": lidar.to_dict(),
        "imu_model": preset.imu.to_dict(),
        "ego": preset.ego.to_dict(),
        "scene": preset.scene.to_dict(),
        "movers": sim.movers,
    }
    write_dataset(dataset, out, metadata)
    if cache is not None:
        shutil.copytree(out, cache.path_for(sim.preset, **key), dirs_exist_ok=True)
    return out


# --- run-odom --------------------------------------------------------------


@dataclass
class FrameOutput:
    """Per-frame result of :class:`OdometryPipeline`."""

    index: int
    time: float
    pose: Pose
    world_points: np.ndarray
    labels: np.ndarray
    diagnostics: dict[str, Any] = field(default_factory=dict)


class OdometryPipeline:
    """Streaming odometry: propagate, deskew, register, check, update maps.

    Memory is bounded by the temporal window and the two voxel maps.
    """

    def __init__(
        self,
        config: PipelineConfig,
        scan_period: float,
        mode: RegistrationMode | str | None = None,
    ):
        self.config = config
        self.scan_period = float(scan_period)
        self.registration = config.registration_config(scan_period, mode)
        threads = config.pipeline.threads
        self.mt = TemporalWindowMap(config.temporal_map.window_length, workers=threads)
        vm = config.voxel_map
        self.mv = PlaneVoxelMap(
            vm.voxel_size, vm.max_points, vm.plane_eps, vm.plane_ratio, vm.min_points
        )
        self.record = StaticVoxelRecord(config.scc_record.voxel_size, config.scc_record.horizon)
        self.gravity = np.array([0.0, 0.0, -config.preprocessing.gravity])
        self.state: NavState | None = None
        self.n_processed = 0

    @property
    def mode(self) -> RegistrationMode:
        return self.registration.mode

    def process(self, index: int, scan: RawScan, imu: ImuMeasurements) -> FrameOutput:
        """Run one sweep through the pipeline."""
        cfg = self.config
        started = time.perf_counter()
        if self.state is None:
            self.state = gravity_aligned_state(imu, scan.scan_start, scan.scan_end, self.gravity)

        prior, trajectory = propagate(
            self.state, imu, scan.scan_end, self.gravity, cfg.preprocessing.max_imu_gap
        )
        body = deskew_to_scan_end(scan, trajectory, end_pose=prior.pose)
        ds_idx = voxel_downsample_indices(body, cfg.preprocessing.voxel_downsample_size)
        ds_body, ds_times = body[ds_idx], scan.times[ds_idx]
        preprocess_time = time.perf_counter() - started

        bootstrap = self.n_processed < cfg.pipeline.n_bootstrap
        degenerate = False
        iterations, converged, n_corr = 0, True, 0
        timing: dict[str, float] = {}
        tick = time.perf_counter()
        if bootstrap:
            state = prior
            stability = np.zeros(ds_body.shape[0], dtype=np.uint8)
        else:
            info = prior_information(scan.scan_end - self.state.time, self.registration)
            try:
                result = register_scan(
                    ds_body, ds_times, self.mt, self.mv, prior, self.registration,
                    information=info,
                )
            except RegistrationDegeneracyError as e:
                if cfg.pipeline.abort_on_degenerate:
                    raise
                warnings.warn(
                    f"Frame {index}: {e}; continuing on the IMU prior", stacklevel=2
                )
                degenerate = True
                state = prior
                if self.mode is RegistrationMode.NO_DYNAMIC:
                    stability = np.zeros(ds_body.shape[0], dtype=np.uint8)
                else:
                    stability = classify_scan(ds_body, ds_times, prior, self.mt, self.registration)
                n_corr = e.n_constraints
            else:
                state = result.state
                stability = result.labels
                iterations, converged = result.iterations, result.converged
                n_corr = result.n_correspondences
                timing.update(result.timing)
        registration_time = time.perf_counter() - tick

        tick = time.perf_counter()
        world = state.pose.apply(body)
        world_ds = world[ds_idx]
        now = scan.scan_end
        scc = spatial_consistency_check(
            world, world_ds, stability, self.record, cfg.scc, cfg.pipeline.threads, now
        )
        if not bootstrap:
            update_static_record(
                self.record, world_ds, stability, state.pose.translation, now,
                cfg.scc.sensor_near_radius,
            )
        scc_time = time.perf_counter() - tick

        tick = time.perf_counter()
        if bootstrap:
            initialize_maps([BootstrapFrame(now, world_ds, ds_times)], self.mt, self.mv, 1)
        else:
            self.mt.push_frame(now, world_ds, ds_times)
            keep = (stability == StabilityLabel.STABLE) & (scc.labels[ds_idx] != FinalLabel.DYNAMIC)
            self.mv.insert_static_points(world_ds[keep])
        map_time = time.perf_counter() - tick

        self.state = state
        self.n_processed += 1
        timing.update(
            preprocess=preprocess_time,
            registration=registration_time,
            scc=scc_time,
            map_update=map_time,
            total=time.perf_counter() - started,
        )
        n_ds = int(ds_body.shape[0])
        diagnostics = {
            "frame": int(index),
            "time": float(now),
            "bootstrap": bool(bootstrap),
            "degenerate": bool(degenerate),
            "iterations": int(iterations),
            "converged": bool(converged),
            "n_points": int(body.shape[0]),
            "n_downsampled": n_ds,
            "n_correspondences": int(n_corr),
            "stable_fraction": float(np.mean(stability == StabilityLabel.STABLE)) if n_ds else 0.0,
            "n_clusters": len(scc.clusters),
            "n_dynamic_clusters": sum(1 for c in scc.cluster_labels if c == FinalLabel.DYNAMIC),
            "dynamic_fraction": float(np.mean(scc.labels == FinalLabel.DYNAMIC))
            if scc.labels.size else 0.0,
            "timing": {k: float(v) for k, v in sorted(timing.items())},
        }
        logger.debug(
            "Frame %d: %d iterations, stable %.2f, %d dynamic clusters",
            index, iterations, diagnostics["stable_fraction"], diagnostics["n_dynamic_clusters"],
        )
        return FrameOutput(index, now, state.pose, world, scc.labels, diagnostics)


def iter_odometry(
    dataset_dir: str | Path,
    config: PipelineConfig,
    mode: RegistrationMode | str | None = None,
) -> Iterator[FrameOutput]:
    """Stream per-frame outputs for a dataset directory."""
    dataset = read_dataset(dataset_dir)
    pipeline = OdometryPipeline(config, dataset.scan_period, mode)
    logger.info("Running %s odometry on %d frames", pipeline.mode.value, len(dataset))
    for i, record in enumerate(dataset.iter_frames()):
        yield pipeline.process(i, record.to_scan(dataset.scan_period), dataset.imu)


def run_odom(
    dataset_dir: str | Path,
    config: PipelineConfig,
    out_dir: str | Path,
    mode: RegistrationMode | str | None = None,
) -> dict[str, Path]:
    """Run odometry and write trajectory, labeled/static maps and diagnostics.

    Returns:
        Mapping of output kind to file path
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "trajectory": out / TRAJECTORY_FILE,
        "labeled_map": out / LABELED_MAP_FILE,
        "static_map": out / STATIC_MAP_FILE,
        "diagnostics": out / DIAGNOSTICS_FILE,
        "config": out / USED_CONFIG_FILE,
    }
    used = config if mode is None else config.replace(registration={"mode": RegistrationMode(mode).value})
    paths["config"].write_text(dump_config(used), encoding="utf-8")

    samples: list[tuple[float, Pose]] = []
    with ExitStack() as stack:
        diag = stack.enter_context(DiagnosticsWriter(paths["diagnostics"]))
        labeled = stack.enter_context(paths["labeled_map"].open("w", encoding="utf-8"))
        static = stack.enter_context(paths["static_map"].open("w", encoding="utf-8"))
        for frame in iter_odometry(dataset_dir, used):
            samples.append((frame.time, frame.pose))
            rows = labeled_map_frame(frame.world_points, frame.labels, frame.index)
            append_labeled_map(labeled, rows)
            write_static_map(static, rows)
            diag.write(frame.diagnostics)
    write_tum(paths["trajectory"], Trajectory.from_samples(samples))
    logger.info("Wrote odometry outputs to %s", out)
    return paths


# --- run-eval --------------------------------------------------------------


def _timing_percentiles(diagnostics: pd.DataFrame) -> pd.DataFrame:
    cols = sorted(c for c in diagnostics.columns if c.startswith("timing."))
    if not cols:
        return pd.DataFrame(columns=["phase", "mean_ms", "p50_ms", "p90_ms", "p99_ms", "max_ms"])
    rows = []
    for col in cols:
        ms = diagnostics[col].dropna().to_numpy(float) * 1000.0
        rows.append(
            {
                "phase": col.split(".", 1)[1],
                "mean_ms": float(ms.mean()),
                "p50_ms": float(np.percentile(ms, 50)),
                "p90_ms": float(np.percentile(ms, 90)),
                "p99_ms": float(np.percentile(ms, 99)),
                "max_ms": float(ms.max()),
            }
        )
    return pd.DataFrame(rows)


def score_labeled_map(labeled: pd.DataFrame, dataset_dir: str | Path) -> tuple[MapScore, pd.DataFrame]:
    """Join a labeled map with simulator truth by (frame, index) and score it.

    Returns:
        Tuple of (pooled score, per-frame SA/DA/HA table)
    """
    dataset = read_dataset(dataset_dir)
    per_frame = []
    rows = []
    for frame_id, group in labeled.groupby("frame", sort=True):
        truth = dataset.frame(int(frame_id)).label
        score = map_scores(group["label"].to_numpy(), truth[group["index"].to_numpy()])
        per_frame.append(score)
        rows.append({"frame": int(frame_id), "SA": score.sa, "DA": score.da, "HA": score.ha})
    return pooled_scores(per_frame), pd.DataFrame(rows, columns=["frame", "SA", "DA", "HA"])


def run_eval(
    estimate_path: str | Path,
    truth_path: str | Path,
    out_dir: str | Path,
    config: PipelineConfig | None = None,
    labeled_map_path: str | Path | None = None,
    dataset_dir: str | Path | None = None,
    diagnostics_path: str | Path | None = None,
) -> dict[str, Any]:
    """Score a run and write metrics.json plus CSV tables and an HTML report.

    Map scores need both ``labeled_map_path`` and ``dataset_dir``;
    frame statistics and timing need ``diagnostics_path``.
    """
    config = config or PipelineConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    ate = evaluate_ate(read_tum(estimate_path), read_tum(truth_path), config.evaluation.max_dt)
    metrics: dict[str, Any] = {"ate_rmse": ate.rmse, "n_poses": len(ate.pairs)}
    pd.DataFrame(
        {"time": [p.time for p in ate.pairs], "error": ate.errors}
    ).to_csv(out / "ate_errors.csv", index=False, float_format="%.6f")
    tables = {
        "Trajectory": create_metrics_table(
            pd.DataFrame([{"ATE RMSE [m]": ate.rmse, "poses": len(ate.pairs)}]), "Aligned ATE"
        )
    }

    if labeled_map_path is not None and dataset_dir is not None:
        score, per_frame = score_labeled_map(read_labeled_map(labeled_map_path), dataset_dir)
        metrics.update(score.to_dict())
        tables["Static map"] = create_metrics_table(
            pd.DataFrame([{"SA": score.sa, "DA": score.da, "HA": score.ha}]),
            "Pooled static/dynamic recall [%]",
            higher_is_better=["SA", "DA", "HA"],
        )
    elif labeled_map_path is not None or dataset_dir is not None:
        warnings.warn("Map scoring needs both a labeled map and the dataset; skipped", stacklevel=2)
        per_frame = None
    else:
        per_frame = None

    if diagnostics_path is not None:
        diagnostics = read_diagnostics(diagnostics_path)
        stats_cols = [c for c in ("frame", "time", "stable_fraction", "iterations",
                                  "n_correspondences", "dynamic_fraction", "degenerate")
                      if c in diagnostics.columns]
        stats = diagnostics[stats_cols]
        if per_frame is not None:
            stats = stats.merge(per_frame, on="frame", how="left")
        stats.to_csv(out / "frame_stats.csv", index=False, float_format="%.6f")
        timing = _timing_percentiles(diagnostics)
        timing.to_csv(out / "timing_percentiles.csv", index=False, float_format="%.3f")
        if "stable_fraction" in diagnostics.columns:
            metrics["mean_stable_fraction"] = float(diagnostics["stable_fraction"].mean())
        if "degenerate" in diagnostics.columns:
            metrics["n_degenerate_frames"] = int(diagnostics["degenerate"].sum())
        metrics["timing_ms"] = {
            row.phase: {"mean": row.mean_ms, "p50": row.p50_ms, "p90": row.p90_ms}
            for row in timing.itertuples(index=False)
        }
        tables["Timing"] = create_metrics_table(timing, "Per-frame time [ms]", decimals=2)
    elif per_frame is not None:
        per_frame.to_csv(out / "frame_stats.csv", index=False, float_format="%.6f")

    (out / "metrics.json").write_text(
        json.dumps(metrics, indent=2, sort_keys=True), encoding="utf-8"
    )
    write_html_report(tables, out / "report.html", "dynlio evaluation")
    logger.info("ATE RMSE %.4f m", ate.rmse)
    return metrics


# --- run-bench -------------------------------------------------------------


def run_bench(
    config: PipelineConfig,
    out_dir: str | Path,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    modes: Sequence[RegistrationMode | str] = tuple(RegistrationMode),
) -> pd.DataFrame:
    """Simulate the configured preset per seed and run every mode on it.

    Runs whose RMSE exceeds ``evaluation.failure_rmse`` or that abort are
    flagged failed and left out of the medians.

    Returns:
        Per-run table, also written to ``ablation.csv``
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in seeds:
        seed_cfg = config.replace(simulation={"seed": int(seed)})
        data_dir = run_sim(seed_cfg, out / f"data-seed{seed}")
        truth = read_tum(data_dir / "groundtruth.txt")
        for mode in modes:
            mode = RegistrationMode(mode)
            run_dir = out / f"seed{seed}-{mode.value}"
            try:
                paths = run_odom(data_dir, seed_cfg, run_dir, mode)
                ate = evaluate_ate(read_tum(paths["trajectory"]), truth, config.evaluation.max_dt)
                rmse = ate.rmse
                diagnostics = read_diagnostics(paths["diagnostics"])
                frame_ms = float(diagnostics["timing.total"].mean() * 1000.0)
            except RegistrationDegeneracyError as e:
                logger.warning("Seed %s, mode %s aborted: %s", seed, mode.value, e)
                rmse, frame_ms = float("inf"), float("nan")
            failed = not np.isfinite(rmse) or rmse > config.evaluation.failure_rmse
            rows.append(
                {"preset": config.simulation.preset, "seed": int(seed), "mode": mode.value,
                 "rmse": rmse, "failed": failed, "mean_frame_ms": frame_ms}
            )
            logger.info("Seed %s %-10s RMSE %.4f%s", seed, mode.value, rmse,
                        " (failed)" if failed else "")

    runs = pd.DataFrame(rows)
    runs.to_csv(out / "ablation.csv", index=False, float_format="%.6f")
    summary = summarize_bench(runs)
    summary.to_csv(out / "ablation_summary.csv", index=False, float_format="%.6f")
    write_html_report(
        {
            "Summary": create_metrics_table(summary, "Median ATE RMSE per mode",
                                            lower_is_better=["median_rmse"]),
            "Runs": create_metrics_table(runs, "All runs", lower_is_better=["rmse"]),
        },
        out / "report.html",
        f"dynlio ablation on {config.simulation.preset}",
    )
    return runs


def summarize_bench(runs: pd.DataFrame) -> pd.DataFrame:
    """Per-mode median RMSE over successful runs and failure counts."""
    ok = runs.loc[~runs["failed"]]
    median = ok.groupby("mode", sort=False)["rmse"].median()
    counts = runs.groupby("mode", sort=False).agg(
        n_runs=("rmse", "size"), n_failed=("failed", "sum")
    )
    summary = counts.join(median.rename("median_rmse")).reset_index()
    return summary[["mode", "median_rmse", "n_runs", "n_failed"]]
