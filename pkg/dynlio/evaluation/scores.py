"""Static/dynamic classification scores of per-point map labels."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike

STATIC = 0
DYNAMIC = 1


def harmonic_accuracy(sa: float | None, da: float | None) -> float | None:
    """2 SA DA / (SA + DA); 0 when both are 0, None when either is undefined."""
    if sa is None or da is None:
        return None
    if sa + da <= 0:
        return 0.0
    return 2.0 * sa * da / (sa + da)


@dataclass(frozen=True)
class MapScore:
    """Confusion counts and the recalls derived from them.

    ``true_static`` counts static points labeled static, ``false_dynamic``
    static points labeled dynamic, and so on. Scores are percentages; a
    recall whose class is absent from the truth is None.
    """

    true_static: int = 0
    false_dynamic: int = 0
    true_dynamic: int = 0
    false_static: int = 0

    @property
    def n_static(self) -> int:
        return self.true_static + self.false_dynamic

    @property
    def n_dynamic(self) -> int:
        return self.true_dynamic + self.false_static

    @property
    def sa(self) -> float | None:
        """Static accuracy: recall of static points."""
        return 100.0 * self.true_static / self.n_static if self.n_static else None

    @property
    def da(self) -> float | None:
        """Dynamic accuracy: recall of dynamic points."""
        return 100.0 * self.true_dynamic / self.n_dynamic if self.n_dynamic else None

    @property
    def ha(self) -> float | None:
        return harmonic_accuracy(self.sa, self.da)

    def __add__(self, other: MapScore) -> MapScore:
        return MapScore(
            self.true_static + other.true_static,
            self.false_dynamic + other.false_dynamic,
            self.true_dynamic + other.true_dynamic,
            self.false_static + other.false_static,
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = asdict(self)
        out.update(SA=self.sa, DA=self.da, HA=self.ha)
        return out


def map_scores(predicted: ArrayLike, truth: ArrayLike) -> MapScore:
    """Score predicted labels (0 static, 1 dynamic) against ground truth.

    Truth entries other than 0 or 1 (e.g. 255 for unlabeled) are ignored.

    Raises:
        ValueError: On a length mismatch
    """
    pred = np.asarray(predicted).reshape(-1)
    true = np.asarray(truth).reshape(-1)
    if pred.shape != true.shape:
        msg = f"Label length mismatch: {pred.shape[0]} predicted vs {true.shape[0]} truth"
        raise ValueError(msg)
    pred_dyn = pred == DYNAMIC
    is_static = true == STATIC
    is_dynamic = true == DYNAMIC
    return MapScore(
        true_static=int(np.count_nonzero(is_static & ~pred_dyn)),
        false_dynamic=int(np.count_nonzero(is_static & pred_dyn)),
        true_dynamic=int(np.count_nonzero(is_dynamic & pred_dyn)),
        false_static=int(np.count_nonzero(is_dynamic & ~pred_dyn)),
    )


def pooled_scores(scores: list[MapScore]) -> MapScore:
    """Sum confusion counts over frames or sequences."""
    total = MapScore()
    for s in scores:
        total = total + s
    return total
