"""On-disk formats of datasets and run outputs.

Dataset directory::

    frames.idx        CSV index: index, file, frame_time, n_points
    frames/NNNNNN.frm binary FrameRecord per sweep
    imu.csv           time, gx, gy, gz, ax, ay, az
    groundtruth.txt   TUM trajectory (time tx ty tz qx qy qz qw) at scan ends
    dataset.yaml      scan period, seed and the scene/sensor description

Run outputs are TUM trajectories, ``labeled_map.txt`` (x y z label frame
index), ``static_map.txt`` (x y z label) and JSON-lines diagnostics.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, TextIO

import numpy as np
import pandas as pd
import yaml

from dynlio.core.errors import DataFormatError
from dynlio.evaluation.trajectory import Trajectory
from dynlio.odometry.preprocessing import ImuMeasurements, RawScan
from dynlio.simulation.generator import LabeledFrame, SimulatedDataset

logger = logging.getLogger(__name__)

FRAME_MAGIC = b"DYNLIOFR"
FRAME_VERSION = 1
FRAME_HEADER = struct.Struct("<8sHdI")
POINT_DTYPE = np.dtype(
    [
        ("x", "<f4"),
        ("y", "<f4"),
        ("z", "<f4"),
        ("t_offset", "<f4"),
        ("ring", "<u2"),
        ("label", "u1"),
        ("mover_id", "<u2"),
    ]
)
UNLABELED = 255

INDEX_FILE = "frames.idx"
FRAMES_DIR = "frames"
IMU_FILE = "imu.csv"
GROUND_TRUTH_FILE = "groundtruth.txt"
DATASET_META_FILE = "dataset.yaml"

IMU_COLUMNS = ["time", "gx", "gy", "gz", "ax", "ay", "az"]
TUM_COLUMNS = ["time", "tx", "ty", "tz", "qx", "qy", "qz", "qw"]
LABELED_MAP_COLUMNS = ["x", "y", "z", "label", "frame", "index"]


@dataclass(frozen=True, eq=False)
class FrameRecord:
    """One sweep as stored on disk.

    Attributes:
        frame_time: Scan start time in seconds
        points: (N, 3) sensor-frame positions
        t_offset: (N,) seconds after ``frame_time``
        ring: (N,) laser ring index
        label: (N,) 0 static, 1 dynamic, 255 unlabeled
        mover_id: (N,) 0 for static points
    """

    frame_time: float
    points: np.ndarray
    t_offset: np.ndarray
    ring: np.ndarray
    label: np.ndarray
    mover_id: np.ndarray

    def __post_init__(self) -> None:
        n = np.asarray(self.points).reshape(-1, 3).shape[0]
        for name in ("t_offset", "ring", "label", "mover_id"):
            if np.asarray(getattr(self, name)).reshape(-1).shape[0] != n:
                msg = f"FrameRecord field {name!r} does not have {n} entries"
                raise DataFormatError(msg)

    def __len__(self) -> int:
        return int(np.asarray(self.points).reshape(-1, 3).shape[0])

    @classmethod
    def from_labeled_frame(cls, frame: LabeledFrame) -> FrameRecord:
        scan = frame.scan
        rings = scan.rings if scan.rings is not None else np.zeros(len(scan), np.uint16)
        return cls(
            scan.scan_start,
            scan.points,
            scan.times - scan.scan_start,
            rings,
            frame.labels,
            frame.mover_ids,
        )

    def to_scan(self, scan_period: float) -> RawScan:
        """Raw sweep covering [frame_time, frame_time + scan_period]."""
        t_off = np.asarray(self.t_offset, dtype=float)
        times = self.frame_time + np.clip(t_off, 0.0, scan_period)
        return RawScan(
            np.asarray(self.points, dtype=float),
            times,
            self.frame_time,
            self.frame_time + scan_period,
            np.asarray(self.ring, dtype=np.uint16),
        )


def encode_frame(record: FrameRecord) -> bytes:
    """Serialize a FrameRecord: header then packed little-endian point records."""
    n = len(record)
    body = np.empty(n, dtype=POINT_DTYPE)
    pts = np.asarray(record.points, dtype=float).reshape(-1, 3)
    body["x"], body["y"], body["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    body["t_offset"] = record.t_offset
    body["ring"] = record.ring
    body["label"] = record.label
    body["mover_id"] = record.mover_id
    header = FRAME_HEADER.pack(FRAME_MAGIC, FRAME_VERSION, float(record.frame_time), n)
    return header + body.tobytes()


def decode_frame(data: bytes, source: str = "<bytes>") -> FrameRecord:
    """Parse bytes written by :func:`encode_frame`.

    Raises:
        DataFormatError: On a bad magic, unsupported version or size mismatch
    """
    if len(data) < FRAME_HEADER.size:
        msg = f"{source}: truncated header ({len(data)} bytes)"
        raise DataFormatError(msg)
    magic, version, frame_time, count = FRAME_HEADER.unpack_from(data)
    if magic != FRAME_MAGIC:
        msg = f"{source}: bad magic {magic!r}, expected {FRAME_MAGIC!r}"
        raise DataFormatError(msg)
    if version != FRAME_VERSION:
        msg = f"{source}: unsupported frame version {version} (reader supports {FRAME_VERSION})"
        raise DataFormatError(msg)
    expected = FRAME_HEADER.size + count * POINT_DTYPE.itemsize
    if len(data) != expected:
        msg = f"{source}: header announces {count} points ({expected} bytes), file has {len(data)}"
        raise DataFormatError(msg)
    body = np.frombuffer(data, dtype=POINT_DTYPE, count=count, offset=FRAME_HEADER.size)
    points = np.column_stack([body["x"], body["y"], body["z"]]).astype(float)
    return FrameRecord(
        float(frame_time),
        points,
        body["t_offset"].astype(float),
        body["ring"].copy(),
        body["label"].copy(),
        body["mover_id"].copy(),
    )


def write_frame(path: str | Path, record: FrameRecord) -> Path:
    out = Path(path)
    out.write_bytes(encode_frame(record))
    return out


def read_frame(path: str | Path) -> FrameRecord:
    p = Path(path)
    try:
        data = p.read_bytes()
    except FileNotFoundError as e:
        msg = f"Frame file not found: {p}"
        raise DataFormatError(msg) from e
    return decode_frame(data, str(p))


def _read_table(path: Path, what: str, **kwargs: Any) -> pd.DataFrame:
    try:
        return pd.read_csv(path, **kwargs)
    except FileNotFoundError as e:
        msg = f"{what} not found: {path}"
        raise DataFormatError(msg) from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as e:
        msg = f"Cannot parse {what} {path}: {e}"
        raise DataFormatError(msg) from e


def write_imu_csv(path: str | Path, imu: ImuMeasurements) -> Path:
    df = pd.DataFrame(
        np.column_stack([imu.times, imu.gyro, imu.accel]), columns=IMU_COLUMNS
    )
    df.to_csv(path, index=False, float_format="%.9f")
    return Path(path)


def read_imu_csv(path: str | Path) -> ImuMeasurements:
    df = _read_table(Path(path), "IMU file")
    missing = [c for c in IMU_COLUMNS if c not in df.columns]
    if missing:
        msg = f"IMU file {path} lacks columns {missing}"
        raise DataFormatError(msg)
    try:
        return ImuMeasurements(
            df["time"].to_numpy(float),
            df[["gx", "gy", "gz"]].to_numpy(float),
            df[["ax", "ay", "az"]].to_numpy(float),
        )
    except ValueError as e:
        msg = f"Invalid IMU stream in {path}: {e}"
        raise DataFormatError(msg) from e


def write_tum(path: str | Path, trajectory: Trajectory) -> Path:
    """Write ``time tx ty tz qx qy qz qw`` rows."""
    df = pd.DataFrame(
        np.column_stack([trajectory.times, trajectory.positions, trajectory.quaternions]),
        columns=TUM_COLUMNS,
    )
    df.to_csv(path, sep=" ", header=False, index=False, float_format="%.9f")
    return Path(path)


def read_tum(path: str | Path) -> Trajectory:
    df = _read_table(
        Path(path), "trajectory file", sep=r"\s+", header=None, comment="#", names=TUM_COLUMNS
    )
    if df.isna().any().any():
        msg = f"Trajectory file {path} has rows with fewer than 8 columns"
        raise DataFormatError(msg)
    try:
        return Trajectory.from_arrays(
            df["time"].to_numpy(float),
            df[["tx", "ty", "tz"]].to_numpy(float),
            df[["qx", "qy", "qz", "qw"]].to_numpy(float),
        )
    except ValueError as e:
        msg = f"Invalid trajectory in {path}: {e}"
        raise DataFormatError(msg) from e


def labeled_map_frame(
    points: np.ndarray, labels: np.ndarray, frame: int, indices: np.ndarray | None = None
) -> pd.DataFrame:
    """Labeled-map rows of one frame."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = pts.shape[0]
    idx = np.arange(n) if indices is None else np.asarray(indices)
    return pd.DataFrame(
        {
            "x": pts[:, 0],
            "y": pts[:, 1],
            "z": pts[:, 2],
            "label": np.asarray(labels, dtype=np.int64),
            "frame": np.full(n, int(frame), dtype=np.int64),
            "index": idx.astype(np.int64),
        }
    )


def append_labeled_map(handle: TextIO, rows: pd.DataFrame) -> None:
    rows.to_csv(handle, sep=" ", header=False, index=False, float_format="%.4f")


def read_labeled_map(path: str | Path) -> pd.DataFrame:
    df = _read_table(
        Path(path), "labeled map", sep=r"\s+", header=None, names=LABELED_MAP_COLUMNS
    )
    if df.isna().any().any():
        msg = f"Labeled map {path} has rows with fewer than 6 columns"
        raise DataFormatError(msg)
    return df.astype({"label": np.int64, "frame": np.int64, "index": np.int64})


def write_static_map(target: str | Path | TextIO, labeled: pd.DataFrame) -> None:
    """Write the label-0 subset of a labeled map as ``x y z label`` rows."""
    static = labeled.loc[labeled["label"] == 0, ["x", "y", "z", "label"]]
    static.to_csv(target, sep=" ", header=False, index=False, float_format="%.4f")


class DiagnosticsWriter:
    """Appends one JSON object per frame."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._handle: TextIO | None = None

    def __enter__(self) -> DiagnosticsWriter:
        self._handle = self.path.open("w", encoding="utf-8")
        return self

    def __exit__(self, *exc: object) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def write(self, record: dict[str, Any]) -> None:
        if self._handle is None:
            msg = "DiagnosticsWriter is not open"
            raise RuntimeError(msg)
        self._handle.write(json.dumps(record, sort_keys=True) + "\n")


def read_diagnostics(path: str | Path) -> pd.DataFrame:
    """Per-frame diagnostics with nested ``timing`` flattened to ``timing.<phase>``."""
    p = Path(path)
    rows = []
    try:
        with p.open(encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as e:
                    msg = f"{p}:{lineno}: invalid JSON ({e.msg})"
                    raise DataFormatError(msg) from e
    except FileNotFoundError as e:
        msg = f"Diagnostics file not found: {p}"
        raise DataFormatError(msg) from e
    return pd.json_normalize(rows)


@dataclass(eq=False)
class DatasetOnDisk:
    """A dataset directory; frames are read on demand."""

    root: Path
    index: pd.DataFrame
    imu: ImuMeasurements
    ground_truth: Trajectory
    scan_period: float
    metadata: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.index)

    def frame(self, i: int) -> FrameRecord:
        """Read frame ``i`` and check it against the index."""
        row = self.index.iloc[int(i)]
        record = read_frame(self.root / str(row["file"]))
        if len(record) != int(row["n_points"]):
            msg = f"{row['file']}: index lists {row['n_points']} points, file has {len(record)}"
            raise DataFormatError(msg)
        return record

    def iter_frames(self) -> Iterator[FrameRecord]:
        for i in range(len(self)):
            yield self.frame(i)


def write_dataset(
    dataset: SimulatedDataset, out_dir: str | Path, metadata: dict[str, Any] | None = None
) -> Path:
    """Write a simulated dataset; identical inputs give byte-identical files."""
    out = Path(out_dir)
    try:
        (out / FRAMES_DIR).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        msg = f"Cannot create output directory {out}: {e}"
        raise DataFormatError(msg) from e

    index_rows = []
    for frame in dataset.frames:
        name = f"{FRAMES_DIR}/{frame.index:06d}.frm"
        record = FrameRecord.from_labeled_frame(frame)
        write_frame(out / name, record)
        index_rows.append((frame.index, name, record.frame_time, len(record)))
    pd.DataFrame(index_rows, columns=["index", "file", "frame_time", "n_points"]).to_csv(
        out / INDEX_FILE, index=False, float_format="%.9f"
    )
    write_imu_csv(out / IMU_FILE, dataset.imu)
    write_tum(out / GROUND_TRUTH_FILE, Trajectory.from_samples(dataset.ground_truth))
    meta = {"scan_period": float(dataset.scan_period), **dataset.metadata, **(metadata or {})}
    (out / DATASET_META_FILE).write_text(yaml.safe_dump(meta, sort_keys=True), encoding="utf-8")
    logger.info("Wrote %d frames to %s", len(dataset.frames), out)
    return out


def read_dataset(path: str | Path) -> DatasetOnDisk:
    """Open a dataset directory; frame files are validated as they are read.

    Raises:
        DataFormatError: If the index, IMU stream, ground truth or metadata is
            missing or inconsistent
    """
    root = Path(path)
    if not root.is_dir():
        msg = f"Dataset directory not found: {root}"
        raise DataFormatError(msg)
    try:
        meta = yaml.safe_load((root / DATASET_META_FILE).read_text(encoding="utf-8")) or {}
    except FileNotFoundError as e:
        msg = f"Dataset metadata not found: {root / DATASET_META_FILE}"
        raise DataFormatError(msg) from e
    if "scan_period" not in meta:
        msg = f"{root / DATASET_META_FILE} lacks scan_period"
        raise DataFormatError(msg)

    index = _read_table(root / INDEX_FILE, "frame index")
    missing = {"file", "frame_time", "n_points"} - set(index.columns)
    if missing:
        msg = f"{root / INDEX_FILE} lacks columns {sorted(missing)}"
        raise DataFormatError(msg)
    if np.any(np.diff(index["frame_time"].to_numpy(float)) <= 0):
        msg = f"{root / INDEX_FILE}: frames are not in increasing time order"
        raise DataFormatError(msg)
    return DatasetOnDisk(
        root,
        index,
        read_imu_csv(root / IMU_FILE),
        read_tum(root / GROUND_TRUTH_FILE),
        float(meta["scan_period"]),
        meta,
    )
