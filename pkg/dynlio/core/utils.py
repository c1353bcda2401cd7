"""Utility functions for dynlio."""

from __future__ import annotations

import sys
from typing import Any

import numpy as np


def validate_positive(value: float, name: str) -> float:
    """Validate that a number is finite and strictly positive.

    Args:
        value: Number to check
        name: Parameter name used in the error message

    Returns:
        The value as float

    Raises:
        ValueError: If the value is not a positive finite number
    """
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        msg = f"{name} must be positive, got {value}"
        raise ValueError(msg)
    return value


def validate_fraction(value: float, name: str) -> float:
    """Validate that a number lies in the open interval (0, 1)."""
    value = float(value)
    if not 0.0 < value < 1.0:
        msg = f"{name} must lie in (0, 1), got {value}"
        raise ValueError(msg)
    return value


def voxel_keys(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Integer voxel indices floor(p / voxel_size) of (N, 3) points."""
    return np.floor(np.asarray(points, dtype=float) / voxel_size).astype(np.int64)


_KEY_OFFSET = 1 << 20
_KEY_BITS = 21


def pack_keys(keys: np.ndarray) -> np.ndarray:
    """Pack (N, 3) integer voxel keys into sortable int64 codes.

    Indices must lie within +/- 2**20 voxels of the origin.
    """
    k = np.asarray(keys, dtype=np.int64) + _KEY_OFFSET
    if k.size and (k.min() < 0 or k.max() >= (1 << _KEY_BITS)):
        msg = "Voxel index out of packable range (+/- 2**20 voxels)"
        raise ValueError(msg)
    return (k[:, 0] << (2 * _KEY_BITS)) | (k[:, 1] << _KEY_BITS) | k[:, 2]


def get_dynlio_info() -> dict[str, Any]:
    """Get information about the dynlio package.

    Returns:
        Dictionary with package information
    """
    from dynlio import __version__
    from dynlio.data.presets import list_lidar_presets, list_presets

    return {
        "package": "dynlio",
        "version": __version__,
        "description": "Dynamic-aware lidar-inertial registration with space-time normals",
        "subcommands": [
            "run-sim", "run-odom", "run-eval", "run-bench",
            "config", "presets", "sitrep", "clear-cache",
        ],
        "presets": list_presets(),
        "lidars": list_lidar_presets(),
    }


def sitrep() -> None:
    """Print package, dependency and cache information."""
    print("dynlio System Report")
    print("=" * 50)

    info = get_dynlio_info()
    print(f"\nPackage: {info['package']} v{info['version']}")
    print(f"Description: {info['description']}")

    print(f"\nPython: {sys.version}")
    print(f"Platform: {sys.platform}")

    print("\nDependencies:")
    for dep in ["numpy", "scipy", "pandas", "sklearn", "yaml", "jinja2", "appdirs"]:
        try:
            module = __import__(dep)
            print(f"  {dep}: {module.__version__}")
        except ImportError:
            print(f"  {dep}: Not installed")
        except AttributeError:
            print(f"  {dep}: Installed (version unavailable)")

    print("\nDataset Cache:")
    try:
        from .cache import DatasetCache

        cache_info = DatasetCache().get_cache_info()
        print(f"  Cache directory: {cache_info['cache_dir']}")
        print(f"  Datasets cached: {cache_info['datasets_count']}")
        print(f"  Total cache size: {cache_info['total_size_bytes']} bytes")
    except Exception as e:
        print(f"  Error accessing cache: {e}")

    print("\nPresets:")
    from dynlio.data.presets import list_lidar_presets, list_presets

    print(f"  Scenes: {', '.join(list_presets())}")
    print(f"  Lidars: {', '.join(list_lidar_presets())}")

    print("\n" + "=" * 50)


def clear_all_cache() -> None:
    """Clear all cached simulator datasets."""
    from .cache import DatasetCache

    DatasetCache().clear_cache()
