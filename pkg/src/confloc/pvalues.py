"""Conformal p-values and p-value-based position filtering.

The p-value of a test score s against n calibration scores is
(1 + #{s_i >= s}) / (n + 1), with ties counted toward the numerator
(the conservative choice). Under exchangeability of the test score with the
calibration scores, P(p <= alpha) <= alpha, so filtering points at p <= alpha
mislabels a truly-positioned point with probability at most alpha.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ContractError
from .risk import Path
from .scores import DISTANCE, CalibrationScores, distance_score, max_aggregate


class PValue(NamedTuple):
    """A conformal p-value; always on the lattice {k/(n+1) : k = 1..n+1}."""

    value: float
    n: int


def pvalue(cal: CalibrationScores, test_score: float) -> PValue:
    """(1 + #{calibration scores >= test score}) / (n + 1)."""
    if cal.n == 0:
        raise ContractError("p-value requires a non-empty calibration set")
    count = cal.n - int(np.searchsorted(cal.scores, float(test_score), side="left"))
    return PValue((1 + count) / (cal.n + 1), cal.n)


@dataclass(frozen=True)
class FilterRow:
    point_id: int
    score: float
    pvalue: float
    retained: bool


@dataclass(frozen=True)
class FilterReport:
    rows: tuple[FilterRow, ...]
    alpha: float

    @property
    def retained_ids(self) -> frozenset[int]:
        return frozenset(r.point_id for r in self.rows if r.retained)


def filter_points(points: Sequence[tuple[int, float]], cal: CalibrationScores,
                  alpha: float) -> FilterReport:
    """Retain exactly the points whose p-value exceeds alpha.

    ``points`` is a sequence of (id, non-conformity score) pairs of the same
    score kind as the calibration set; per-point p-values are reported
    alongside the keep/drop decision.
    """
    if not 0.0 < alpha < 1.0:
        raise ContractError(f"alpha must lie in (0, 1), got {alpha}")
    rows = []
    for point_id, score in points:
        p = pvalue(cal, score)
        rows.append(FilterRow(int(point_id), float(score), p.value, p.value > alpha))
    return FilterReport(tuple(rows), float(alpha))


@dataclass(frozen=True)
class SuperuniformityRow:
    alpha: float
    fraction: float
    exceeds: bool


def superuniformity_check(null_pvalues: Sequence[float] | Sequence[PValue],
                          alpha_grid: Sequence[float],
                          slack: float = 0.0) -> list[SuperuniformityRow]:
    """Empirical CDF of null p-values on an alpha grid.

    For p-values computed on draws exchangeable with the calibration scores,
    the fraction at alpha should not exceed alpha (up to the caller-supplied
    Monte-Carlo slack); rows breaking alpha + slack are flagged.
    """
    if len(null_pvalues) == 0 or len(alpha_grid) == 0:
        raise ContractError("need p-values and a non-empty alpha grid")
    values = np.array([p.value if isinstance(p, PValue) else float(p)
                       for p in null_pvalues])
    rows = []
    for alpha in alpha_grid:
        fraction = float(np.mean(values <= alpha))
        rows.append(SuperuniformityRow(float(alpha), fraction,
                                       fraction > alpha + slack))
    return rows


def path_calibration_scores(paths: Sequence[Path]) -> CalibrationScores:
    """Distance calibration scores for path units: each path contributes the
    max over its samples' positioning errors."""
    if len(paths) == 0:
        raise ContractError("need at least one path")
    values = []
    for path in paths:
        if any(s.predicted is None for s in path.samples):
            raise ContractError(
                f"path {path.path_id!r} has samples without predictions")
        per_point = [distance_score(s.truth, s.predicted) for s in path.samples]
        values.append(max_aggregate(per_point))
    return CalibrationScores.from_values(values, DISTANCE)
