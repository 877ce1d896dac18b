"""Split-conformal prediction sets with finite-sample coverage.

Given n sorted calibration scores and a miscoverage level alpha, the
conformal threshold is the k-th smallest score with k = ceil((n+1)(1-alpha)).
Candidates whose score falls at or below the threshold form the prediction
set; over exchangeable data the set contains the truth with probability in
[1-alpha, 1-alpha + 1/(n+1)].

Degenerate levels are handled with extended reals rather than rejected:
k > n yields +inf (everything included, alpha near 0) and k < 1 yields -inf
(empty sets, alpha = 1), so sweep code needs no special cases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError
from .scores import CLASSIFICATION, DISTANCE, CalibrationScores


@dataclass(frozen=True)
class ConformalQuantile:
    """The prediction-set threshold derived from calibration scores.

    ``value`` is the k_index-th smallest calibration score when
    1 <= k_index <= n, +inf when k_index > n, and -inf when k_index < 1.
    """

    value: float
    alpha: float
    n: int
    k_index: int
    kind: str


@dataclass(frozen=True)
class ClassPredictionSet:
    """A set of candidate class ids."""

    members: frozenset[int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", frozenset(int(m) for m in self.members))

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, label: int) -> bool:
        return int(label) in self.members


@dataclass(frozen=True)
class RegionPredictionSet:
    """A closed disc of candidate positions around the point prediction.

    The radius is an extended real: +inf covers the whole plane (alpha near
    0) and -inf denotes the empty region (alpha = 1).
    """

    center: tuple[float, float]
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "radius", float(self.radius))

    def contains(self, point: Sequence[float]) -> bool:
        dx = float(point[0]) - self.center[0]
        dy = float(point[1]) - self.center[1]
        return math.hypot(dx, dy) <= self.radius

    def __contains__(self, point) -> bool:
        return self.contains(point)


def conformal_quantile(cal: CalibrationScores, alpha: float) -> ConformalQuantile:
    """Compute the conformal threshold at miscoverage level alpha.

    k_index = ceil((n+1)(1-alpha)); the value is the k_index-th smallest
    calibration score, or +/-inf outside [1, n] per the extended-real
    convention.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    n = cal.n
    k = math.ceil((n + 1) * (1.0 - alpha))
    if k > n:
        value = math.inf
    elif k < 1:
        value = -math.inf
    else:
        value = float(cal.scores[k - 1])
    return ConformalQuantile(value=value, alpha=float(alpha), n=n, k_index=k,
                             kind=cal.kind)


def class_prediction_set(probs: Sequence[float] | np.ndarray,
                         q: ConformalQuantile) -> ClassPredictionSet:
    """All class ids y with score 1 - probs[y] <= q.value (inclusive)."""
    if q.kind != CLASSIFICATION:
        raise ContractError("class_prediction_set needs a classification quantile")
    arr = np.asarray(probs, dtype=np.float64)
    members = np.nonzero(1.0 - arr <= q.value)[0]
    return ClassPredictionSet(frozenset(int(m) for m in members))


def region_prediction_set(pred: Sequence[float],
                          q: ConformalQuantile) -> RegionPredictionSet:
    """The closed disc of radius q.value around the predicted coordinates."""
    if q.kind != DISTANCE:
        raise ContractError("region_prediction_set needs a distance quantile")
    return RegionPredictionSet((float(pred[0]), float(pred[1])), q.value)


def evaluate_coverage(sets: Sequence[ClassPredictionSet] | Sequence[RegionPredictionSet],
                      truths: Sequence) -> float:
    """Fraction of prediction sets containing their truth (label or coords)."""
    if len(sets) == 0 or len(sets) != len(truths):
        raise ContractError("sets and truths must have equal positive length")
    hits = 0
    if isinstance(sets[0], ClassPredictionSet):
        for s, y in zip(sets, truths):
            hits += int(y) in s
    else:
        for s, y in zip(sets, truths):
            hits += s.contains(y)
    return hits / len(sets)


def average_set_size(sets: Sequence[ClassPredictionSet]) -> float:
    """Mean cardinality of class prediction sets."""
    if len(sets) == 0:
        raise ContractError("average_set_size requires a non-empty sequence")
    return sum(len(s) for s in sets) / len(sets)
