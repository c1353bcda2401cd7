"""Scenario and sensor presets for dynlio."""

from .presets import (
    LIDAR_PRESETS,
    ScenarioPreset,
    get_lidar,
    get_preset,
    list_lidar_presets,
    list_presets,
)

__all__ = [
    "LIDAR_PRESETS",
    "ScenarioPreset",
    "get_lidar",
    "get_preset",
    "list_lidar_presets",
    "list_presets",
]
