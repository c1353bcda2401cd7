"""Trajectory and map-label evaluation."""

from .report import MetricsTableStyler, create_metrics_table, write_html_report
from .scores import MapScore, harmonic_accuracy, map_scores, pooled_scores
from .trajectory import (
    AteResult,
    PosePair,
    Trajectory,
    associate,
    ate_rmse,
    evaluate_ate,
    position_errors,
    umeyama_align,
)

__all__ = [
    "AteResult",
    "MapScore",
    "MetricsTableStyler",
    "PosePair",
    "Trajectory",
    "associate",
    "ate_rmse",
    "create_metrics_table",
    "evaluate_ate",
    "harmonic_accuracy",
    "map_scores",
    "pooled_scores",
    "position_errors",
    "umeyama_align",
    "write_html_report",
]
