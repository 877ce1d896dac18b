"""Evaluation protocol: alpha sweeps (empirical vs target coverage, average
set size), risk-control sweeps, and deterministic machine-readable reports.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .conformal import (
    class_prediction_set,
    conformal_quantile,
    evaluate_coverage,
    average_set_size,
    region_prediction_set,
)
from .dataset import Dataset
from .errors import ConfigurationError, ContractError
from .predictor import PredictionSource
from .risk import (
    DIRECTION_BY_FAMILY,
    Path,
    RiskConfig,
    build_loss_curve,
    calibrate_lambda,
    evaluate_risk,
    geometric_error_grid,
)
from .scores import TASK_COORDS, score_calibration_set

# The 20-level alpha grid used for the headline coverage/set-size tables,
# from 0 to 1 inclusive.
TABLE1_ALPHA_GRID = (0.0, 0.052, 0.105, 0.158, 0.211, 0.263, 0.316, 0.368,
                     0.421, 0.474, 0.526, 0.579, 0.632, 0.684, 0.737, 0.789,
                     0.842, 0.895, 0.947, 1.0)


@dataclass(frozen=True)
class SweepRow:
    """One (alpha, coverage) measurement; avg_set_size only for class tasks."""

    alpha: float
    target_coverage: float
    empirical_coverage: float
    avg_set_size: float | None
    n_cal: int
    n_test: int
    seed: int


@dataclass(frozen=True)
class AggregateRow:
    alpha: float
    mean_coverage: float
    std_coverage: float
    mean_set_size: float | None
    std_set_size: float | None
    n_trials: int


@dataclass(frozen=True)
class TrialReport:
    """Per-seed sweep rows plus per-alpha aggregates (recomputable from rows)."""

    rows: tuple[SweepRow, ...]
    aggregates: tuple[AggregateRow, ...]


def alpha_sweep(source: PredictionSource, cal: Dataset, test: Dataset,
                alphas: Sequence[float], task: str, seed: int = 0) -> list[SweepRow]:
    """Calibrate once per alpha on ``cal``, evaluate sets on ``test``.

    Calibration scores and test predictions are computed once; only the
    quantile and the sets vary with alpha.
    """
    cal_scores = score_calibration_set(source, cal, task)
    preds = source.predict_dataset(test)
    rows = []
    for alpha in alphas:
        q = conformal_quantile(cal_scores, alpha)
        if task == TASK_COORDS:
            sets = [region_prediction_set(preds.coords[i], q) for i in range(len(test))]
            coverage = evaluate_coverage(sets, test.coords)
            size: float | None = None
        else:
            probs = (preds.building_probs if task == "building" else preds.floor_probs)
            truths = test.building if task == "building" else test.floor
            sets = [class_prediction_set(probs[i], q) for i in range(len(test))]
            coverage = evaluate_coverage(sets, truths)
            size = average_set_size(sets)
        rows.append(SweepRow(alpha=float(alpha), target_coverage=1.0 - float(alpha),
                             empirical_coverage=coverage, avg_set_size=size,
                             n_cal=len(cal), n_test=len(test), seed=seed))
    return rows


def aggregate_sweeps(rows: Sequence[SweepRow]) -> TrialReport:
    """Group sweep rows by alpha and attach mean/stddev aggregates."""
    if not rows:
        raise ContractError("no sweep rows to aggregate")
    by_alpha: dict[float, list[SweepRow]] = {}
    for row in rows:
        by_alpha.setdefault(row.alpha, []).append(row)
    aggregates = []
    for alpha in sorted(by_alpha):
        group = by_alpha[alpha]
        coverages = np.array([r.empirical_coverage for r in group])
        sizes = [r.avg_set_size for r in group if r.avg_set_size is not None]
        aggregates.append(AggregateRow(
            alpha=alpha,
            mean_coverage=float(coverages.mean()),
            std_coverage=float(coverages.std(ddof=0)),
            mean_set_size=float(np.mean(sizes)) if sizes else None,
            std_set_size=float(np.std(sizes, ddof=0)) if sizes else None,
            n_trials=len(group),
        ))
    return TrialReport(tuple(rows), tuple(aggregates))


@dataclass(frozen=True)
class RiskRow:
    family: str
    beta: float
    lambda_hat: float
    cal_risk: float
    test_risk: float
    n_cal_paths: int
    n_test_paths: int
    satisfied: bool
    seed: int


def risk_sweep(cal_paths: Sequence[Path], test_paths: Sequence[Path],
               betas: Sequence[float], family: str,
               lambda_grid: np.ndarray | None = None, bound: float = 1.0,
               seed: int = 0) -> list[RiskRow]:
    """Calibrate lambda per beta on the calibration paths, report test risk."""
    if len(cal_paths) == 0:
        raise ContractError("need at least one calibration path")
    if lambda_grid is None:
        lambda_grid = geometric_error_grid(cal_paths)
    curve = build_loss_curve(cal_paths, lambda_grid, family, bound)
    rows = []
    for beta in betas:
        config = RiskConfig(beta=float(beta), bound=bound, lambda_grid=lambda_grid,
                            direction=DIRECTION_BY_FAMILY[family])
        result = calibrate_lambda(curve, config)
        test_risk = evaluate_risk(result, test_paths, family, bound)
        rows.append(RiskRow(family=family, beta=float(beta),
                            lambda_hat=result.lambda_hat,
                            cal_risk=result.risk_at_lambda, test_risk=test_risk,
                            n_cal_paths=len(cal_paths), n_test_paths=len(test_paths),
                            satisfied=result.satisfied, seed=seed))
    return rows


def _cell_text(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6f}"
    return str(value)


def _row_items(row) -> list[tuple[str, object]]:
    if dataclasses.is_dataclass(row):
        return [(f.name, getattr(row, f.name)) for f in dataclasses.fields(row)]
    if isinstance(row, Mapping):
        return list(row.items())
    raise ContractError("report rows must be dataclasses or mappings")


def _json_value(value):
    if value is None or isinstance(value, (str, bool)):
        return value
    if isinstance(value, (int, np.integer)):
        return int(value)
    return round(float(value), 6)


def write_text_atomic(destination: str | os.PathLike, text: str) -> None:
    """Write-then-rename so partial failures never leave half-written files."""
    destination = os.fspath(destination)
    directory = os.path.dirname(destination) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-report-")
    try:
        with os.fdopen(fd, "w", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, destination)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render_report(rows: Sequence, fmt: str) -> str:
    """Render rows as CSV or JSON text: fixed column order (field order of the
    first row), floats at 6 decimal places, LF line endings."""
    if not rows:
        raise ContractError("emit_report requires at least one row")
    if fmt not in ("csv", "json"):
        raise ConfigurationError(f"unknown report format {fmt!r}")
    items = [_row_items(r) for r in rows]
    columns = [name for name, _ in items[0]]
    for row in items[1:]:
        if [name for name, _ in row] != columns:
            raise ContractError("report rows must share one column set")
    if fmt == "csv":
        lines = [",".join(columns)]
        for row in items:
            lines.append(",".join(_cell_text(v) for _, v in row))
        return "\n".join(lines) + "\n"
    payload = [{name: _json_value(v) for name, v in row} for row in items]
    return json.dumps(payload, indent=2) + "\n"


def emit_report(rows: Sequence, fmt: str, destination: str | os.PathLike) -> None:
    """Serialize rows to ``destination``; byte-identical for identical rows."""
    write_text_atomic(destination, render_report(rows, fmt))


def report_filename(experiment: str, task: str, seed: int, fmt: str = "csv") -> str:
    return f"{experiment}_{task}_{seed}.{fmt}"
