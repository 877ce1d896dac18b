"""Base positioning models behind conformal calibration.

Two interchangeable prediction sources implement the same batch contract
(``predict_dataset``): a built-in weighted k-NN fingerprint matcher, and a
table of externally computed predictions imported from CSV so that any model
(including deep ones trained elsewhere) can be plugged in.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .dataset import Dataset, Fingerprint, format_cell
from .errors import (
    ConfigurationError,
    ContractError,
    CoverageError,
    FormatError,
    ParseError,
    ValidationError,
)

UNIFORM = "uniform"
INVERSE_DISTANCE = "inverse_distance"
EUCLIDEAN = "euclidean_on_normalized_rssi"

# Regularizer added to neighbor distances before inversion, so an exact
# fingerprint match gets a finite, dominant weight.
INVERSE_WEIGHT_EPS = 1e-9

_PROB_SUM_TOL = 1e-9
_IMPORT_SUM_BAND = 1e-6
_QUERY_CHUNK = 512


@dataclass(frozen=True)
class KnnConfig:
    k: int = 5
    weighting: str = UNIFORM
    distance: str = EUCLIDEAN

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")
        if self.weighting not in (UNIFORM, INVERSE_DISTANCE):
            raise ConfigurationError(f"unknown weighting {self.weighting!r}")
        if self.distance != EUCLIDEAN:
            raise ConfigurationError(f"unknown distance {self.distance!r}")


def _check_probs(vec: np.ndarray, name: str) -> np.ndarray:
    arr = np.array(vec, dtype=np.float64, copy=True)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(f"{name} must be a non-empty 1-D vector")
    if arr.min() < 0:
        raise ValidationError(f"{name} entries must be non-negative")
    if abs(arr.sum() - 1.0) > _PROB_SUM_TOL:
        raise ValidationError(f"{name} must sum to 1 (got {arr.sum()!r})")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PredictionOutput:
    """Point coordinates plus per-class probability vectors for one record."""

    coords: tuple[float, float]
    building_probs: np.ndarray
    floor_probs: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "coords", (float(self.coords[0]), float(self.coords[1])))
        object.__setattr__(self, "building_probs",
                           _check_probs(self.building_probs, "building_probs"))
        object.__setattr__(self, "floor_probs",
                           _check_probs(self.floor_probs, "floor_probs"))


@dataclass(frozen=True)
class Predictions:
    """Columnar batch of prediction outputs, aligned with a dataset's rows."""

    coords: np.ndarray  # (n, 2)
    building_probs: np.ndarray  # (n, B)
    floor_probs: np.ndarray  # (n, F)

    def __post_init__(self) -> None:
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise ValidationError("coords must have shape (n, 2)")
        n = self.coords.shape[0]
        for name, arr in (("building_probs", self.building_probs),
                          ("floor_probs", self.floor_probs)):
            if arr.ndim != 2 or arr.shape[0] != n:
                raise ValidationError(f"{name} must have shape (n, K)")
            if n and (arr.min() < 0 or np.abs(arr.sum(axis=1) - 1.0).max() > _PROB_SUM_TOL):
                raise ValidationError(f"{name} rows must be probability vectors")

    def __len__(self) -> int:
        return self.coords.shape[0]

    def row(self, i: int) -> PredictionOutput:
        return PredictionOutput((self.coords[i, 0], self.coords[i, 1]),
                                self.building_probs[i], self.floor_probs[i])


class PredictionSource(Protocol):
    def predict_dataset(self, dataset: Dataset) -> Predictions: ...


@dataclass(frozen=True)
class KnnModel:
    """Weighted k-NN over normalized fingerprints.

    Coordinates are the (weighted) mean of the k nearest neighbors; the
    building/floor heads are the neighbors' (weighted) vote fractions.
    Distance ties are broken toward the lower training-record index.
    """

    fingerprints: np.ndarray  # (n, W), normalized
    coords: np.ndarray  # (n, 2)
    floors: np.ndarray  # (n,)
    buildings: np.ndarray  # (n,)
    num_floors: int
    num_buildings: int
    config: KnnConfig

    def __len__(self) -> int:
        return self.fingerprints.shape[0]

    def predict_dataset(self, dataset: Dataset) -> Predictions:
        return _predict_matrix(self, dataset.rssi)

    def predict_fingerprints(self, rssi: np.ndarray) -> Predictions:
        return _predict_matrix(self, np.atleast_2d(np.asarray(rssi, dtype=np.float64)))


def fit_knn(train: Dataset, config: KnnConfig) -> KnnModel:
    """Fit the k-NN matcher on a normalized training split."""
    if len(train) == 0:
        raise ContractError("training set must be non-empty")
    if train.meta.normalization is None:
        raise ContractError("training set must be normalized before fitting")
    if config.k > len(train):
        raise ConfigurationError(
            f"k={config.k} exceeds training-set size {len(train)}")
    return KnnModel(train.rssi, train.coords, train.floor, train.building,
                    train.meta.num_floors, train.meta.num_buildings, config)


def predict(model: KnnModel, x: Fingerprint | np.ndarray) -> PredictionOutput:
    """Predict one fingerprint; see KnnModel for the aggregation rule."""
    vec = x.rssi if isinstance(x, Fingerprint) else np.asarray(x, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != model.fingerprints.shape[1]:
        raise ContractError(
            f"fingerprint has {vec.shape} entries, model expects "
            f"({model.fingerprints.shape[1]},)")
    return _predict_matrix(model, vec[None, :]).row(0)


def _distances(queries: np.ndarray, train: np.ndarray) -> np.ndarray:
    q2 = np.einsum("ij,ij->i", queries, queries)
    t2 = np.einsum("ij,ij->i", train, train)
    d2 = q2[:, None] + t2[None, :] - 2.0 * (queries @ train.T)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)

def _predict_matrix(model: KnnModel, queries: np.ndarray) -> Predictions:
    if queries.ndim != 2 or queries.shape[1] != model.fingerprints.shape[1]:
        raise ContractError("query matrix width does not match model fingerprints")
    k = model.config.k
    n = queries.shape[0]
    coords = np.empty((n, 2))
    bprobs = np.zeros((n, model.num_buildings))
    fprobs = np.zeros((n, model.num_floors))
    for start in range(0, n, _QUERY_CHUNK):
        stop = min(start + _QUERY_CHUNK, n)
        d = _distances(queries[start:stop], model.fingerprints)
        # stable argsort == tie-break toward the lower training index
        nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
        if model.config.weighting == INVERSE_DISTANCE:
            w = 1.0 / (np.take_along_axis(d, nearest, axis=1) + INVERSE_WEIGHT_EPS)
        else:
            w = np.ones((stop - start, k))
        w = w / w.sum(axis=1, keepdims=True)
        coords[start:stop] = np.einsum("qk,qkc->qc", w, model.coords[nearest])
        rows = np.repeat(np.arange(start, stop), k)
        np.add.at(bprobs, (rows, model.buildings[nearest].ravel()), w.ravel())
        np.add.at(fprobs, (rows, model.floors[nearest].ravel()), w.ravel())
    return Predictions(coords, bprobs, fprobs)


@dataclass(frozen=True)
class PredictionTable:
    """Externally computed predictions keyed by record id."""

    entries: dict[int, PredictionOutput]
    num_floors: int
    num_buildings: int

    def __len__(self) -> int:
        return len(self.entries)

    def predict_dataset(self, dataset: Dataset) -> Predictions:
        missing = [int(i) for i in dataset.ids if int(i) not in self.entries]
        if missing:
            raise CoverageError(f"prediction table missing record ids {missing}")
        outs = [self.entries[int(i)] for i in dataset.ids]
        return Predictions(np.array([o.coords for o in outs], dtype=np.float64),
                           np.array([o.building_probs for o in outs], dtype=np.float64),
                           np.array([o.floor_probs for o in outs], dtype=np.float64))


def _prediction_columns(num_buildings: int, num_floors: int) -> list[str]:
    return (["ID", "PRED_LON", "PRED_LAT"]
            + [f"P_BLDG_{b}" for b in range(num_buildings)]
            + [f"P_FLOOR_{f}" for f in range(num_floors)])


def import_predictions(csv_text: str, expected: Dataset) -> PredictionTable:
    """Load a prediction CSV (ID, PRED_LON, PRED_LAT, P_BLDG_*, P_FLOOR_*).

    Every record id of ``expected`` must appear exactly once. Probability rows
    summing within 1e-6 of 1 are renormalized; anything further off is
    rejected.
    """
    num_b = expected.meta.num_buildings
    num_f = expected.meta.num_floors
    reader = csv.reader(io.StringIO(csv_text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise FormatError("empty input: no header row") from None
    positions = {name: i for i, name in enumerate(header)}
    required = _prediction_columns(num_b, num_f)
    for name in required:
        if name not in positions:
            raise FormatError(f"missing mandatory column {name}")
    cols = [positions[name] for name in required]

    entries: dict[int, PredictionOutput] = {}
    for row_num, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"row {row_num}: expected {len(header)} fields, got {len(row)}")
        try:
            values = [float(row[c]) for c in cols]
        except ValueError:
            raise ParseError(f"row {row_num}: non-numeric cell") from None
        if values[0] != int(values[0]):
            raise ParseError(f"row {row_num}, column ID: expected an integer")
        rec_id = int(values[0])
        if rec_id in entries:
            raise ValidationError(f"duplicate prediction for record id {rec_id}")
        bp = np.array(values[3:3 + num_b])
        fp = np.array(values[3 + num_b:])
        for name, vec in (("P_BLDG", bp), ("P_FLOOR", fp)):
            s = vec.sum()
            if abs(s - 1.0) > _IMPORT_SUM_BAND:
                raise ValidationError(
                    f"row {row_num}: {name} probabilities sum to {s!r}, outside "
                    f"[1-1e-6, 1+1e-6]")
        # renormalize only rows that need it; already-valid rows stay
        # bit-identical so an export/import round trip is exact
        if abs(bp.sum() - 1.0) > _PROB_SUM_TOL:
            bp = bp / bp.sum()
        if abs(fp.sum() - 1.0) > _PROB_SUM_TOL:
            fp = fp / fp.sum()
        entries[rec_id] = PredictionOutput((values[1], values[2]), bp, fp)

    missing = sorted(int(i) for i in expected.ids if int(i) not in entries)
    if missing:
        raise CoverageError(f"predictions missing for record ids {missing}")
    return PredictionTable(entries, num_f, num_b)


def export_predictions(ids: np.ndarray, predictions: Predictions) -> str:
    """Emit predictions in the import schema; cells use exact repr formatting."""
    if len(ids) != len(predictions):
        raise ContractError("ids and predictions must have equal length")
    num_b = predictions.building_probs.shape[1]
    num_f = predictions.floor_probs.shape[1]
    lines = [",".join(_prediction_columns(num_b, num_f))]
    for i, rec_id in enumerate(ids):
        cells = [str(int(rec_id)),
                 format_cell(predictions.coords[i, 0]),
                 format_cell(predictions.coords[i, 1])]
        cells += [format_cell(v) for v in predictions.building_probs[i]]
        cells += [format_cell(v) for v in predictions.floor_probs[i]]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
