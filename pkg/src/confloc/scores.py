"""Non-conformity scores and calibration score sets.

Two score families are supported: the classification score ``1 - p[label]``
(in [0, 1]) for building/floor set prediction, and the Euclidean positioning
error in meters for coordinate regions. Multi-point calibration units (path
windows) aggregate per-point scores by their maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dataset import Dataset
from .errors import ContractError, ValidationError
from .predictor import PredictionSource

CLASSIFICATION = "classification"
DISTANCE = "distance"
SCORE_KINDS = (CLASSIFICATION, DISTANCE)

TASK_BUILDING = "building"
TASK_FLOOR = "floor"
TASK_COORDS = "coords"
TASKS = (TASK_BUILDING, TASK_FLOOR, TASK_COORDS)


def kind_for_task(task: str) -> str:
    if task not in TASKS:
        raise ContractError(f"unknown task {task!r}")
    return DISTANCE if task == TASK_COORDS else CLASSIFICATION


@dataclass(frozen=True)
class CalibrationScores:
    """Sorted non-conformity scores from the held-out calibration split."""

    scores: np.ndarray  # sorted ascending
    kind: str

    def __post_init__(self) -> None:
        arr = np.array(self.scores, dtype=np.float64, copy=True)
        if arr.ndim != 1:
            raise ValidationError("scores must be 1-D")
        if self.kind not in SCORE_KINDS:
            raise ValidationError(f"unknown score kind {self.kind!r}")
        if arr.size:
            if not np.all(np.isfinite(arr)):
                raise ValidationError("scores must be finite")
            if arr.min() < 0:
                raise ValidationError("scores must be non-negative")
            if self.kind == CLASSIFICATION and arr.max() > 1.0:
                raise ValidationError("classification scores must be <= 1")
            if np.any(np.diff(arr) < 0):
                raise ValidationError("scores must be sorted ascending")
        arr.flags.writeable = False
        object.__setattr__(self, "scores", arr)

    @classmethod
    def from_values(cls, values: Iterable[float], kind: str) -> CalibrationScores:
        return cls(np.sort(np.asarray(list(values), dtype=np.float64)), kind)

    @property
    def n(self) -> int:
        return self.scores.shape[0]


def class_score(probs: Sequence[float] | np.ndarray, label: int) -> float:
    """Non-conformity of a labeled classification: 1 - probs[label].

    Clamped to [0, 1] so float noise in vote-fraction sums cannot push the
    score outside its range.
    """
    arr = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < arr.shape[0]:
        raise ContractError(f"label {label} out of range for {arr.shape[0]} classes")
    return min(1.0, max(0.0, float(1.0 - arr[label])))


def distance_score(truth: Sequence[float], pred: Sequence[float]) -> float:
    """Euclidean positioning error in meters between truth and prediction."""
    tx, ty = float(truth[0]), float(truth[1])
    px, py = float(pred[0]), float(pred[1])
    if not all(map(math.isfinite, (tx, ty, px, py))):
        raise ContractError("coordinates must be finite")
    return math.hypot(tx - px, ty - py)


def max_aggregate(scores: Iterable[float]) -> float:
    """Aggregate a multi-point calibration unit by its worst (maximum) score."""
    values = [float(s) for s in scores]
    if not values:
        raise ContractError("max_aggregate requires a non-empty score sequence")
    return max(values)


def score_dataset(source: PredictionSource, data: Dataset, task: str) -> np.ndarray:
    """Per-record non-conformity scores in dataset order (unsorted)."""
    kind_for_task(task)  # validates the task name
    preds = source.predict_dataset(data)
    out = np.empty(len(data))
    if task == TASK_COORDS:
        for i in range(len(data)):
            out[i] = distance_score((data.longitude[i], data.latitude[i]),
                                    preds.coords[i])
    elif task == TASK_BUILDING:
        for i in range(len(data)):
            out[i] = class_score(preds.building_probs[i], int(data.building[i]))
    else:
        for i in range(len(data)):
            out[i] = class_score(preds.floor_probs[i], int(data.floor[i]))
    return out


def score_calibration_set(source: PredictionSource, cal: Dataset, task: str,
                          kind: str | None = None) -> CalibrationScores:
    """Score every calibration record for the task and sort ascending.

    ``kind`` may be passed for explicitness; it must match the task's score
    family (classification for building/floor, distance for coords).
    """
    inferred = kind_for_task(task)
    if kind is not None and kind != inferred:
        raise ContractError(
            f"score kind {kind!r} does not match task {task!r} (expects {inferred!r})")
    return CalibrationScores.from_values(score_dataset(source, cal, task), inferred)
