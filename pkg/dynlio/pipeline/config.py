"""Pipeline configuration: one frozen dataclass per module, loaded from YAML.

Precedence is defaults < config file < ``--section.key`` command-line
overrides. Unknown sections or keys are errors.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from dynlio.core.errors import ConfigError
from dynlio.core.utils import validate_fraction, validate_positive
from dynlio.odometry.estimator import RegistrationConfig, RegistrationMode
from dynlio.odometry.scc import SccConfig

logger = logging.getLogger(__name__)


def _check_positive(obj: Any, *names: str) -> None:
    for name in names:
        validate_positive(getattr(obj, name), name)


@dataclass(frozen=True)
class NormalsConfig:
    """Space-time neighborhoods, normal estimation and the stability test.

    ``time_scale`` of None means voxel_downsample_size / scan_period.
    """

    k_neighbors: int = 20
    k_current: int = 5
    max_neighbor_dist: float = 1.0
    k_min: int = 8
    max_eigen_ratio: float = 0.5
    time_scale: float | None = None
    theta_thr_deg: float = 5.7
    cache_tol: float = 0.05

    def __post_init__(self) -> None:
        _check_positive(self, "k_neighbors", "k_current", "max_neighbor_dist", "k_min",
                        "max_eigen_ratio", "theta_thr_deg", "cache_tol")
        if self.time_scale is not None:
            validate_positive(self.time_scale, "time_scale")
        if self.theta_thr_deg >= 90.0:
            msg = f"theta_thr_deg must be below 90, got {self.theta_thr_deg}"
            raise ValueError(msg)


@dataclass(frozen=True)
class TemporalMapConfig:
    window_length: float = 2.0

    def __post_init__(self) -> None:
        _check_positive(self, "window_length")


@dataclass(frozen=True)
class VoxelMapConfig:
    """Long-term plane map."""

    voxel_size: float = 1.0
    max_points: int = 50
    plane_eps: float = 0.05**2
    plane_ratio: float = 0.25
    min_points: int = 6
    max_corr_dist: float = 0.5

    def __post_init__(self) -> None:
        _check_positive(self, "voxel_size", "max_points", "plane_eps", "min_points",
                        "max_corr_dist")
        validate_fraction(self.plane_ratio, "plane_ratio")


@dataclass(frozen=True)
class SccRecordConfig:
    voxel_size: float = 0.5
    horizon: float = 10.0

    def __post_init__(self) -> None:
        _check_positive(self, "voxel_size", "horizon")


@dataclass(frozen=True)
class PreprocessingConfig:
    voxel_downsample_size: float = 0.25
    max_imu_gap: float = 0.05
    gravity: float = 9.81

    def __post_init__(self) -> None:
        _check_positive(self, "voxel_downsample_size", "max_imu_gap", "gravity")


@dataclass(frozen=True)
class RegistrationSection:
    """Solver tunables; the prior sigmas are per second of propagation."""

    mode: str = RegistrationMode.FULL.value
    max_iter: int = 10
    epsilon: float = 1e-3
    huber_delta: float = 0.1
    lidar_sigma: float = 0.02
    rot_sigma: float = 0.01
    trans_sigma: float = 0.1
    vel_sigma: float = 0.1
    min_stable_points: int = 50
    initial_damping: float = 1e-3
    max_damping_tries: int = 8
    sticky_unstable: bool = False

    def __post_init__(self) -> None:
        RegistrationMode(self.mode)
        _check_positive(self, "max_iter", "epsilon", "huber_delta", "lidar_sigma", "rot_sigma",
                        "trans_sigma", "vel_sigma", "min_stable_points", "initial_damping",
                        "max_damping_tries")


@dataclass(frozen=True)
class EvaluationConfig:
    max_dt: float = 0.01
    failure_rmse: float = 1000.0

    def __post_init__(self) -> None:
        _check_positive(self, "max_dt", "failure_rmse")


@dataclass(frozen=True)
class PipelineSection:
    """Run control. ``threads`` never changes results."""

    threads: int = 1
    n_bootstrap: int = 5
    abort_on_degenerate: bool = False

    def __post_init__(self) -> None:
        _check_positive(self, "threads", "n_bootstrap")


@dataclass(frozen=True)
class SimulationConfig:
    """``duration`` of None uses the preset's own length."""

    preset: str = "rich"
    seed: int = 0
    duration: float | None = None
    lidar: str = "vlp16"
    movers: bool = True

    def __post_init__(self) -> None:
        from dynlio.data.presets import list_lidar_presets, list_presets

        if self.preset not in list_presets():
            msg = f"Unknown preset {self.preset!r}; available: {', '.join(list_presets())}"
            raise ValueError(msg)
        if self.lidar not in list_lidar_presets():
            msg = f"Unknown lidar {self.lidar!r}; available: {', '.join(list_lidar_presets())}"
            raise ValueError(msg)
        if self.duration is not None:
            validate_positive(self.duration, "duration")


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the pipeline, grouped by module."""

    normals: NormalsConfig = field(default_factory=NormalsConfig)
    temporal_map: TemporalMapConfig = field(default_factory=TemporalMapConfig)
    voxel_map: VoxelMapConfig = field(default_factory=VoxelMapConfig)
    scc_record: SccRecordConfig = field(default_factory=SccRecordConfig)
    preprocessing: PreprocessingConfig = field(default_factory=PreprocessingConfig)
    registration: RegistrationSection = field(default_factory=RegistrationSection)
    scc: SccConfig = field(default_factory=SccConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    pipeline: PipelineSection = field(default_factory=PipelineSection)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)

    def resolved_time_scale(self, scan_period: float) -> float:
        if self.normals.time_scale is not None:
            return float(self.normals.time_scale)
        return self.preprocessing.voxel_downsample_size / validate_positive(
            scan_period, "scan_period"
        )

    def registration_config(
        self, scan_period: float, mode: RegistrationMode | str | None = None
    ) -> RegistrationConfig:
        """Flatten the relevant sections into the estimator's config."""
        reg, nrm = self.registration, self.normals
        return RegistrationConfig(
            max_iter=int(reg.max_iter),
            epsilon=reg.epsilon,
            theta_thr=float(np.deg2rad(nrm.theta_thr_deg)),
            k_neighbors=int(nrm.k_neighbors),
            k_current=int(nrm.k_current),
            max_neighbor_dist=nrm.max_neighbor_dist,
            max_corr_dist=self.voxel_map.max_corr_dist,
            huber_delta=reg.huber_delta,
            lidar_sigma=reg.lidar_sigma,
            rot_sigma=reg.rot_sigma,
            trans_sigma=reg.trans_sigma,
            vel_sigma=reg.vel_sigma,
            min_stable_points=int(reg.min_stable_points),
            cache_tol=nrm.cache_tol,
            k_min=int(nrm.k_min),
            max_eigen_ratio=nrm.max_eigen_ratio,
            time_scale=self.resolved_time_scale(scan_period),
            initial_damping=reg.initial_damping,
            max_damping_tries=int(reg.max_damping_tries),
            sticky_unstable=bool(reg.sticky_unstable),
            mode=RegistrationMode(mode if mode is not None else reg.mode),
        )

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return {f.name: dataclasses.asdict(getattr(self, f.name)) for f in fields(self)}

    def replace(self, **sections: Mapping[str, Any]) -> PipelineConfig:
        """Copy with some keys of some sections changed (validated)."""
        return config_from_dict(sections, base=self)


def section_names() -> list[str]:
    return [f.name for f in fields(PipelineConfig)]


def _coerce(value: Any, default: Any, key: str) -> Any:
    """Convert a YAML value to the type of the field's default."""
    if value is None:
        if default is None:
            return None
        msg = f"{key} may not be null"
        raise ConfigError(msg)
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        msg = f"{key} must be true or false, got {value!r}"
        raise ConfigError(msg)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            msg = f"{key} must be an integer, got {value!r}"
            raise ConfigError(msg)
        return int(value)
    if isinstance(default, float) or default is None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            msg = f"{key} must be a number, got {value!r}"
            raise ConfigError(msg)
        return float(value)
    if isinstance(default, str):
        return str(value)
    return value


def config_from_dict(
    data: Mapping[str, Any] | None, base: PipelineConfig | None = None
) -> PipelineConfig:
    """Overlay a nested mapping on ``base`` (defaults when None).

    Raises:
        ConfigError: On unknown sections or keys, bad types or invalid values
    """
    base = base or PipelineConfig()
    data = data or {}
    if not isinstance(data, Mapping):
        msg = f"Config must be a mapping of sections, got {type(data).__name__}"
        raise ConfigError(msg)
    known = section_names()
    updates: dict[str, Any] = {}
    for section, values in data.items():
        if section not in known:
            msg = f"Unknown config section {section!r}; known: {', '.join(known)}"
            raise ConfigError(msg)
        if values is None:
            continue
        if not isinstance(values, Mapping):
            msg = f"Config section {section!r} must be a mapping"
            raise ConfigError(msg)
        current = getattr(base, section)
        defaults = {f.name: getattr(type(current)(), f.name) for f in fields(current)}
        changes = {}
        for key, value in values.items():
            if key not in defaults:
                msg = f"Unknown config key {section}.{key}; known: {', '.join(defaults)}"
                raise ConfigError(msg)
            changes[key] = _coerce(value, defaults[key], f"{section}.{key}")
        try:
            updates[section] = dataclasses.replace(current, **changes)
        except ValueError as e:
            msg = f"Invalid value in section {section!r}: {e}"
            raise ConfigError(msg) from e
    return dataclasses.replace(base, **updates)


def parse_override(assignment: str) -> tuple[str, str, Any]:
    """Split ``section.key=value`` into its parts; the value is parsed as YAML."""
    if "=" not in assignment:
        msg = f"Override {assignment!r} must look like section.key=value"
        raise ConfigError(msg)
    path, raw = assignment.split("=", 1)
    if path.count(".") != 1:
        msg = f"Override key {path!r} must look like section.key"
        raise ConfigError(msg)
    section, key = path.split(".")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        msg = f"Cannot parse value of {path}: {e}"
        raise ConfigError(msg) from e
    return section, key, value


def load_config(
    path: str | Path | None = None, overrides: list[str] | None = None
) -> PipelineConfig:
    """Load a YAML config file and apply ``section.key=value`` overrides.

    Args:
        path: YAML file; defaults only when None
        overrides: Assignments applied after the file

    Raises:
        ConfigError: If the file is missing or malformed, or any value is invalid
    """
    config = PipelineConfig()
    if path is not None:
        p = Path(path)
        try:
            with p.open() as f:
                data = yaml.safe_load(f)
        except FileNotFoundError as e:
            msg = f"Config file not found: {p}"
            raise ConfigError(msg) from e
        except yaml.YAMLError as e:
            msg = f"Malformed YAML in {p}: {e}"
            raise ConfigError(msg) from e
        config = config_from_dict(data, config)
        logger.info("Loaded config from %s", p)
    nested: dict[str, dict[str, Any]] = {}
    for assignment in overrides or []:
        section, key, value = parse_override(assignment)
        nested.setdefault(section, {})[key] = value
    if nested:
        config = config_from_dict(nested, config)
    return config


def dump_config(config: PipelineConfig | None = None) -> str:
    """YAML text of a (by default fully defaulted) config."""
    return yaml.safe_dump((config or PipelineConfig()).to_dict(), sort_keys=False)
