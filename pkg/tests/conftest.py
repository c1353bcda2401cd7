"""Shared fixtures for dynlio tests."""

from __future__ import annotations

import numpy as np
import pytest

from dynlio.core.cache import DatasetCache


@pytest.fixture
def rng():
    """Deterministic generator for test data."""
    return np.random.default_rng(1234)


@pytest.fixture
def plane_points(rng):
    """Points on the z = 0 plane, 2 m around the origin."""
    xy = rng.uniform(-2.0, 2.0, size=(400, 2))
    return np.column_stack([xy, np.zeros(len(xy))])


@pytest.fixture
def tmp_cache(tmp_path):
    """Dataset cache rooted in a temporary directory."""
    return DatasetCache(tmp_path / "cache")


def _moving_wall(
    velocity: float,
    n_frames: int = 5,
    period: float = 0.1,
    per_frame: int = 20,
    seed: int = 0,
) -> np.ndarray:
    """(x, y, z, t) samples of the plane x = velocity * t over several frames."""
    gen = np.random.default_rng(seed)
    rows = []
    for k in range(n_frames):
        t = k * period
        yz = gen.uniform(-0.5, 0.5, size=(per_frame, 2))
        x = np.full(per_frame, velocity * t)
        rows.append(np.column_stack([x, yz, np.full(per_frame, t)]))
    return np.vstack(rows)


@pytest.fixture
def moving_wall():
    """Factory for space-time samples of a wall translating along x."""
    return _moving_wall
