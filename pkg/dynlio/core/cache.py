"""On-disk cache for generated simulator datasets."""

from __future__ import annotations

import hashlib
import shutil
from pathlib import Path
from typing import Any

import appdirs


class DatasetCache:
    """Manages cached simulator datasets.

    Datasets are keyed by everything that determines their bytes (preset
    name, seed, duration, lidar model and any scene override), so a cached
    copy is interchangeable with a fresh ``run-sim`` output.
    """

    def __init__(self, cache_dir: str | Path | None = None):
        """Initialize the dataset cache.

        Args:
            cache_dir: Directory to cache datasets. If None, uses user cache directory.
        """
        if cache_dir is None:
            cache_dir = appdirs.user_cache_dir("dynlio")

        self.cache_dir = Path(cache_dir)
        self.datasets_dir = self.cache_dir / "datasets"
        self.datasets_dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def dataset_key(**params: Any) -> str:
        """Stable short key for a set of generation parameters."""
        text = ";".join(f"{k}={params[k]!r}" for k in sorted(params))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def path_for(self, preset: str, **params: Any) -> Path:
        """Directory where a dataset with these parameters lives (or would live)."""
        return self.datasets_dir / f"{preset}-{self.dataset_key(preset=preset, **params)}"

    def has(self, preset: str, **params: Any) -> bool:
        """Whether a complete dataset is cached."""
        return (self.path_for(preset, **params) / "frames.idx").exists()

    def get_cache_info(self) -> dict[str, Any]:
        """Summary of cache contents."""
        entries = sorted(p.name for p in self.datasets_dir.iterdir() if p.is_dir())
        total = sum(f.stat().st_size for f in self.cache_dir.rglob("*") if f.is_file())
        return {
            "cache_dir": str(self.cache_dir),
            "datasets_count": len(entries),
            "datasets": entries,
            "total_size_bytes": total,
        }

    def clear_cache(self) -> None:
        """Remove every cached dataset."""
        if self.datasets_dir.exists():
            shutil.rmtree(self.datasets_dir)
        self.datasets_dir.mkdir(parents=True, exist_ok=True)
