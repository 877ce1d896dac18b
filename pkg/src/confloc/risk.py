"""Conformal risk control for path navigation.

Each path (an ordered run of positioning points with a binary path-membership
flag) is one exchangeable unit. Given per-path losses that are monotone in a
threshold lambda over squared positioning error, the calibrated threshold

    lambda_hat = inf{ lambda : R_hat(lambda) <= beta - (B - beta)/n }

bounds the expected loss of a fresh exchangeable path by beta.

Two loss families are controlled:

* ``fdr``: fraction of path points (P_i = 1) whose squared error exceeds
  lambda, non-increasing in lambda;
* ``fnr``: fraction of non-path points (P_i = 0) whose squared error falls at
  or below lambda, non-decreasing in lambda. Non-decreasing losses are
  calibrated by traversing the grid in reverse (the order-reversing
  reparameterization t = lambda_max - lambda), returning the largest
  qualifying lambda.

Both are proportions, so the loss bound is B = 1. Magnitude-valued variants
(raw squared errors, clipped at a configurable bound) are also provided.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dataset import Fingerprint, format_cell
from .errors import (
    ConfigurationError,
    ContractError,
    FormatError,
    ParseError,
    ValidationError,
)

FDR = "fdr"
FNR = "fnr"
FDR_MAGNITUDE = "fdr_magnitude"
FNR_MAGNITUDE = "fnr_magnitude"

NONINCREASING = "nonincreasing"
NONDECREASING = "nondecreasing"

DIRECTION_BY_FAMILY = {
    FDR: NONINCREASING,
    FNR: NONDECREASING,
    FDR_MAGNITUDE: NONINCREASING,
    FNR_MAGNITUDE: NONDECREASING,
}


@dataclass(frozen=True)
class PathSample:
    """One sequenced positioning point; membership=1 marks a true path point."""

    truth: tuple[float, float]
    predicted: tuple[float, float] | None
    membership: int
    fingerprint: Fingerprint | None = None

    def __post_init__(self) -> None:
        if self.membership not in (0, 1):
            raise ValidationError("membership must be 0 or 1")
        object.__setattr__(self, "truth", (float(self.truth[0]), float(self.truth[1])))
        if self.predicted is not None:
            object.__setattr__(
                self, "predicted", (float(self.predicted[0]), float(self.predicted[1])))


@dataclass(frozen=True)
class Path:
    """An ordered sequence of path samples; the exchangeable calibration unit."""

    path_id: str
    samples: tuple[PathSample, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))
        if not self.samples:
            raise ValidationError(f"path {self.path_id!r} has no samples")

    def __len__(self) -> int:
        return len(self.samples)

    def squared_errors(self) -> np.ndarray:
        if any(s.predicted is None for s in self.samples):
            raise ContractError(
                f"path {self.path_id!r} has samples without predictions")
        t = np.array([s.truth for s in self.samples])
        p = np.array([s.predicted for s in self.samples])
        diff = t - p
        return np.einsum("ij,ij->i", diff, diff)

    def membership_mask(self) -> np.ndarray:
        return np.array([s.membership for s in self.samples], dtype=bool)


def fdr_path_loss(path: Path, lam: float) -> float:
    """Fraction of path points with squared error above lam (0 when no path
    points exist); non-increasing in lam."""
    err = path.squared_errors()
    on_path = path.membership_mask()
    denom = max(int(on_path.sum()), 1)
    return float(np.sum((err > lam) & on_path)) / denom


def fnr_path_loss(path: Path, lam: float) -> float:
    """Fraction of non-path points with squared error at or below lam (0 when
    every point is on the path); non-decreasing in lam."""
    err = path.squared_errors()
    off_path = ~path.membership_mask()
    denom = max(int(off_path.sum()), 1)
    return float(np.sum((err <= lam) & off_path)) / denom


def fdr_magnitude_loss(path: Path, lam: float, bound: float = 1.0) -> float:
    """Mean over samples of the raw squared error where it exceeds lam on a
    path point, each term clipped at ``bound``."""
    err = path.squared_errors()
    terms = np.where((err > lam) & path.membership_mask(), err, 0.0)
    return float(np.mean(np.minimum(terms, bound)))


def fnr_magnitude_loss(path: Path, lam: float, bound: float = 1.0) -> float:
    """Mean over samples of the raw squared error where it falls at or below
    lam on a non-path point, each term clipped at ``bound``."""
    err = path.squared_errors()
    terms = np.where((err <= lam) & ~path.membership_mask(), err, 0.0)
    return float(np.mean(np.minimum(terms, bound)))


def path_loss_fn(family: str, bound: float = 1.0) -> Callable[[Path, float], float]:
    if family == FDR:
        return fdr_path_loss
    if family == FNR:
        return fnr_path_loss
    if family == FDR_MAGNITUDE:
        return lambda path, lam: fdr_magnitude_loss(path, lam, bound)
    if family == FNR_MAGNITUDE:
        return lambda path, lam: fnr_magnitude_loss(path, lam, bound)
    raise ContractError(f"unknown loss family {family!r}")


@dataclass(frozen=True)
class RiskConfig:
    """Target risk level, loss bound, lambda grid and loss direction."""

    beta: float
    bound: float = 1.0
    lambda_grid: np.ndarray = None  # type: ignore[assignment]
    direction: str = NONINCREASING

    def __post_init__(self) -> None:
        grid = np.array(self.lambda_grid, dtype=np.float64, copy=True)
        if grid.ndim != 1 or grid.size == 0:
            raise ConfigurationError("lambda_grid must be a non-empty 1-D sequence")
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise ConfigurationError("lambda_grid must be strictly increasing")
        # beta == bound admitted for the degenerate vacuous-constraint case
        if not 0 < self.beta <= self.bound:
            raise ConfigurationError("need 0 < beta <= bound")
        if self.direction not in (NONINCREASING, NONDECREASING):
            raise ConfigurationError(f"unknown direction {self.direction!r}")
        grid.flags.writeable = False
        object.__setattr__(self, "lambda_grid", grid)


@dataclass(frozen=True)
class LossCurve:
    """Per-path losses evaluated on the lambda grid (n_paths x grid size).

    Construction enforces the framework's loss assumptions row by row: each
    path's losses are monotone in the declared direction along the grid and
    stay within [0, bound]; a violating path is named in the error.
    """

    grid: np.ndarray
    losses: np.ndarray
    direction: str
    path_ids: tuple[str, ...]
    bound: float

    def __post_init__(self) -> None:
        grid = np.array(self.grid, dtype=np.float64, copy=True)
        losses = np.array(self.losses, dtype=np.float64, copy=True)
        if grid.ndim != 1 or grid.size == 0:
            raise ValidationError("grid must be a non-empty 1-D array")
        if losses.shape != (len(self.path_ids), grid.size):
            raise ValidationError("losses must have shape (n_paths, grid size)")
        if self.direction not in (NONINCREASING, NONDECREASING):
            raise ValidationError(f"unknown direction {self.direction!r}")
        diffs = np.diff(losses, axis=1)
        for i, path_id in enumerate(self.path_ids):
            if self.direction == NONINCREASING and diffs.size and np.any(diffs[i] > 0):
                raise ValidationError(
                    f"path {path_id!r}: loss not non-increasing along the grid")
            if self.direction == NONDECREASING and diffs.size and np.any(diffs[i] < 0):
                raise ValidationError(
                    f"path {path_id!r}: loss not non-decreasing along the grid")
            if losses[i].min() < 0 or losses[i].max() > self.bound:
                raise ValidationError(
                    f"path {path_id!r}: loss outside [0, {self.bound}]")
        grid.flags.writeable = False
        losses.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "losses", losses)
        object.__setattr__(self, "path_ids", tuple(self.path_ids))


def build_loss_curve(paths: Sequence[Path], grid: np.ndarray, family: str,
                     bound: float = 1.0) -> LossCurve:
    """Evaluate the family loss for every path over the grid."""
    if len(paths) == 0:
        raise ContractError("need at least one path")
    grid = np.asarray(grid, dtype=np.float64)
    loss = path_loss_fn(family, bound)
    rows = np.array([[loss(path, lam) for lam in grid] for path in paths])
    return LossCurve(grid, rows, DIRECTION_BY_FAMILY[family],
                     tuple(p.path_id for p in paths), bound)


def empirical_risk(curve: LossCurve, grid_index: int) -> float:
    """Mean loss across paths at one grid point."""
    if not 0 <= grid_index < curve.grid.size:
        raise ContractError(f"grid index {grid_index} out of range")
    return float(curve.losses[:, grid_index].mean())


@dataclass(frozen=True)
class LambdaCalibration:
    """Calibrated threshold with the diagnostics needed to audit it.

    ``satisfied`` reports whether the selection inequality held anywhere on
    the grid (if not, the traversal-terminal lambda is returned).
    ``terminal_risk_ok`` checks the loss-bound assumption that every path's
    loss at the traversal-terminal lambda is at most beta; when it fails the
    risk bound is not guaranteed.
    """

    lambda_hat: float
    grid_index: int
    threshold: float
    risk_at_lambda: float
    satisfied: bool
    terminal_risk_ok: bool
    beta: float
    bound: float
    direction: str


def calibrate_lambda(curve: LossCurve, config: RiskConfig) -> LambdaCalibration:
    """Scan the grid for the first threshold meeting R_hat <= beta - (B-beta)/n.

    Non-increasing losses are scanned smallest-to-largest lambda (returning
    the smallest qualifying lambda); non-decreasing losses are scanned in
    reverse (returning the largest). If no grid point qualifies, the terminal
    lambda of the traversal is returned with ``satisfied=False``.
    """
    if curve.direction != config.direction:
        raise ContractError(
            f"curve direction {curve.direction!r} does not match config "
            f"{config.direction!r}")
    if not np.array_equal(curve.grid, config.lambda_grid):
        raise ContractError("curve grid does not match config lambda_grid")
    n = curve.losses.shape[0]
    threshold = config.beta - (config.bound - config.beta) / n
    means = curve.losses.mean(axis=0)
    order = (range(curve.grid.size) if config.direction == NONINCREASING
             else range(curve.grid.size - 1, -1, -1))
    chosen = None
    for idx in order:
        if means[idx] <= threshold:
            chosen = idx
            break
    terminal = (curve.grid.size - 1 if config.direction == NONINCREASING else 0)
    terminal_ok = bool(np.all(curve.losses[:, terminal] <= config.beta))
    satisfied = chosen is not None
    if chosen is None:
        chosen = terminal
    return LambdaCalibration(
        lambda_hat=float(curve.grid[chosen]),
        grid_index=int(chosen),
        threshold=float(threshold),
        risk_at_lambda=float(means[chosen]),
        satisfied=satisfied,
        terminal_risk_ok=terminal_ok,
        beta=config.beta,
        bound=config.bound,
        direction=config.direction,
    )


def evaluate_risk(lambda_hat: float | LambdaCalibration, test_paths: Sequence[Path],
                  family: str, bound: float = 1.0) -> float:
    """Mean family loss at the calibrated threshold over held-out paths."""
    if len(test_paths) == 0:
        raise ContractError("test path set must be non-empty")
    lam = lambda_hat.lambda_hat if isinstance(lambda_hat, LambdaCalibration) else float(lambda_hat)
    loss = path_loss_fn(family, bound)
    return float(np.mean([loss(p, lam) for p in test_paths]))


def observed_error_grid(paths: Sequence[Path]) -> np.ndarray:
    """Exact grid: the sorted unique squared errors observed on the paths.

    The infimum of a right-continuous step loss over lambda is attained on
    this grid.
    """
    if len(paths) == 0:
        raise ContractError("need at least one path")
    errs = np.concatenate([p.squared_errors() for p in paths])
    return np.unique(errs)


def geometric_error_grid(paths: Sequence[Path], size: int = 64) -> np.ndarray:
    """Default grid: ``size`` geometrically spaced values spanning the
    observed squared-error range (padded slightly at both ends)."""
    if size < 2:
        raise ConfigurationError("grid size must be >= 2")
    errs = np.concatenate([p.squared_errors() for p in paths])
    positive = errs[errs > 0]
    if positive.size == 0:
        return np.linspace(0.0, 1.0, size)
    lo = float(positive.min()) * 0.5
    hi = float(errs.max()) * 1.1
    return np.geomspace(lo, hi, size)


def parse_paths_csv(csv_text: str) -> list[Path]:
    """Parse a path file.

    Required columns: PATH_ID, SEQ, LONGITUDE, LATITUDE, MEMBERSHIP. Optional:
    a contiguous WAP001..WAP{W} fingerprint block, and PRED_LON/PRED_LAT for
    precomputed predictions. Samples are ordered by SEQ within each path;
    paths appear in first-row order.
    """
    reader = csv.reader(io.StringIO(csv_text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise FormatError("empty input: no header row") from None
    positions = {name: i for i, name in enumerate(header)}
    for name in ("PATH_ID", "SEQ", "LONGITUDE", "LATITUDE", "MEMBERSHIP"):
        if name not in positions:
            raise FormatError(f"missing mandatory column {name}")
    wap_numbers = sorted(int(h[3:]) for h in header if h.startswith("WAP") and h[3:].isdigit())
    if wap_numbers:
        for i in range(1, max(wap_numbers) + 1):
            if i not in set(wap_numbers):
                raise FormatError(f"missing mandatory column WAP{i:03d}")
    wap_cols = [positions[f"WAP{i:03d}"] for i in wap_numbers]
    has_pred = "PRED_LON" in positions and "PRED_LAT" in positions
    if ("PRED_LON" in positions) != ("PRED_LAT" in positions):
        raise FormatError("PRED_LON and PRED_LAT must both be present or both absent")

    rows: dict[str, list[tuple[int, PathSample]]] = {}
    order: list[str] = []
    for row_num, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"row {row_num}: expected {len(header)} fields, got {len(row)}")
        try:
            path_id = row[positions["PATH_ID"]].strip()
            seq = int(float(row[positions["SEQ"]]))
            lon = float(row[positions["LONGITUDE"]])
            lat = float(row[positions["LATITUDE"]])
            membership = float(row[positions["MEMBERSHIP"]])
            predicted = None
            if has_pred:
                predicted = (float(row[positions["PRED_LON"]]),
                             float(row[positions["PRED_LAT"]]))
            fingerprint = None
            if wap_cols:
                fingerprint = Fingerprint(np.array([float(row[c]) for c in wap_cols]))
        except ValueError:
            raise ParseError(f"row {row_num}: non-numeric cell") from None
        if membership not in (0.0, 1.0):
            raise ParseError(f"row {row_num}, column MEMBERSHIP: expected 0 or 1")
        sample = PathSample((lon, lat), predicted, int(membership), fingerprint)
        if path_id not in rows:
            rows[path_id] = []
            order.append(path_id)
        rows[path_id].append((seq, sample))

    paths = []
    for path_id in order:
        samples = tuple(s for _, s in sorted(rows[path_id], key=lambda t: t[0]))
        paths.append(Path(path_id, samples))
    return paths


def serialize_paths(paths: Sequence[Path]) -> str:
    """Emit paths in the parse_paths_csv schema (LF line endings).

    The WAP block is written when every sample has a fingerprint; the
    PRED_LON/PRED_LAT block when every sample has a prediction.
    """
    if len(paths) == 0:
        raise ContractError("need at least one path")
    all_samples = [s for p in paths for s in p.samples]
    with_fp = all(s.fingerprint is not None for s in all_samples)
    with_pred = all(s.predicted is not None for s in all_samples)
    num_aps = len(all_samples[0].fingerprint) if with_fp else 0
    header = ["PATH_ID", "SEQ"]
    header += [f"WAP{i:03d}" for i in range(1, num_aps + 1)]
    header += ["LONGITUDE", "LATITUDE", "MEMBERSHIP"]
    if with_pred:
        header += ["PRED_LON", "PRED_LAT"]
    lines = [",".join(header)]
    for path in paths:
        for seq, s in enumerate(path.samples):
            cells = [path.path_id, str(seq)]
            if with_fp:
                cells += [format_cell(v) for v in s.fingerprint.rssi]
            cells += [format_cell(s.truth[0]), format_cell(s.truth[1]), str(s.membership)]
            if with_pred:
                cells += [format_cell(s.predicted[0]), format_cell(s.predicted[1])]
            lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def generate_paths(n_paths: int, n_points: int, membership_rate: float,
                   error_sigma: float, seed: int,
                   area: tuple[float, float] = (100.0, 100.0),
                   step_sigma: float = 2.0,
                   id_prefix: str = "path") -> list[Path]:
    """Generate i.i.d. synthetic routes with noisy position predictions.

    Each path is a Gaussian random walk clipped to the area; predictions are
    the truth plus isotropic Gaussian error; membership flags are Bernoulli.
    Paths are drawn i.i.d., so any calibration/test partition of the output
    is exchangeable.
    """
    if n_paths < 1 or n_points < 1:
        raise ConfigurationError("n_paths and n_points must be >= 1")
    if not 0 <= membership_rate <= 1:
        raise ConfigurationError("membership_rate must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    width, height = area
    paths = []
    for i in range(n_paths):
        start = rng.uniform((0.0, 0.0), (width, height))
        steps = rng.normal(0.0, step_sigma, size=(n_points - 1, 2))
        truth = np.vstack([start, start + np.cumsum(steps, axis=0)])
        truth[:, 0] = np.clip(truth[:, 0], 0.0, width)
        truth[:, 1] = np.clip(truth[:, 1], 0.0, height)
        predicted = truth + rng.normal(0.0, error_sigma, size=truth.shape)
        member = (rng.random(n_points) < membership_rate).astype(int)
        samples = tuple(
            PathSample((truth[j, 0], truth[j, 1]), (predicted[j, 0], predicted[j, 1]),
                       int(member[j]))
            for j in range(n_points))
        paths.append(Path(f"{id_prefix}{i:04d}", samples))
    return paths
