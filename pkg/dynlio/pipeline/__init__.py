"""Configuration, file formats, end-to-end runs and the CLI."""

from .config import PipelineConfig, dump_config, load_config
from .runner import OdometryPipeline, run_bench, run_eval, run_odom, run_sim

__all__ = [
    "OdometryPipeline",
    "PipelineConfig",
    "dump_config",
    "load_config",
    "run_bench",
    "run_eval",
    "run_odom",
    "run_sim",
]
