"""UJIIndoorLoc-format ingestion, RSSI normalization, splitting, and a
synthetic log-distance path-loss world for oracle-verifiable experiments.

A dataset is a fixed-width table of RSSI fingerprints (one column per access
point, sentinel value 100 meaning "not detected") with position labels
(longitude/latitude in meters, integer floor and building ids). The CSV schema
is the UJIIndoorLoc one: columns ``WAP001..WAP{W}``, ``LONGITUDE``,
``LATITUDE``, ``FLOOR``, ``BUILDINGID``; extra columns are ignored on input
and never emitted on output.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .errors import (
    ConfigurationError,
    ContractError,
    FormatError,
    ParseError,
    StateError,
    ValidationError,
)

SENTINEL = 100.0

MINMAX_UNIT = "minmax_unit"
ZERO_PENALTY = "zero_penalty"
NORMALIZATION_SCHEMES = (MINMAX_UNIT, ZERO_PENALTY)

_LABEL_COLUMNS = ("LONGITUDE", "LATITUDE", "FLOOR", "BUILDINGID")


@dataclass(frozen=True)
class Fingerprint:
    """One RSSI observation vector across all access points."""

    rssi: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.rssi, dtype=np.float64, copy=True)
        if arr.ndim != 1:
            raise ValidationError("fingerprint must be a 1-D RSSI vector")
        arr.flags.writeable = False
        object.__setattr__(self, "rssi", arr)

    def __len__(self) -> int:
        return self.rssi.shape[0]


@dataclass(frozen=True)
class PositionLabel:
    """Ground-truth position: coordinates in meters plus floor/building ids."""

    longitude: float
    latitude: float
    floor: int
    building: int


@dataclass(frozen=True)
class DatasetMeta:
    num_aps: int
    num_floors: int
    num_buildings: int
    normalization: str | None = None


@dataclass(frozen=True)
class Dataset:
    """Immutable fingerprint dataset with positional labels.

    Record ids are stable integers: row indices at parse/generation time,
    preserved through splits so that split disjointness and external
    prediction tables can be checked by identity.
    """

    rssi: np.ndarray  # (n, W) float64
    longitude: np.ndarray  # (n,) float64, meters
    latitude: np.ndarray  # (n,) float64, meters
    floor: np.ndarray  # (n,) int64
    building: np.ndarray  # (n,) int64
    ids: np.ndarray  # (n,) int64, unique
    meta: DatasetMeta

    def __post_init__(self) -> None:
        rssi = np.array(self.rssi, dtype=np.float64, copy=True)
        lon = np.array(self.longitude, dtype=np.float64, copy=True)
        lat = np.array(self.latitude, dtype=np.float64, copy=True)
        floor = np.array(self.floor, dtype=np.int64, copy=True)
        building = np.array(self.building, dtype=np.int64, copy=True)
        ids = np.array(self.ids, dtype=np.int64, copy=True)
        if rssi.ndim != 2:
            raise ValidationError("rssi must be a 2-D (n, W) array")
        n = rssi.shape[0]
        for name, arr in (("longitude", lon), ("latitude", lat), ("floor", floor),
                          ("building", building), ("ids", ids)):
            if arr.shape != (n,):
                raise ValidationError(f"{name} must have shape ({n},)")
        if rssi.shape[1] != self.meta.num_aps:
            raise ValidationError(
                f"rssi width {rssi.shape[1]} does not match meta.num_aps {self.meta.num_aps}")
        if n > 0:
            if floor.min() < 0 or floor.max() >= self.meta.num_floors:
                raise ValidationError("floor ids must lie in [0, num_floors)")
            if building.min() < 0 or building.max() >= self.meta.num_buildings:
                raise ValidationError("building ids must lie in [0, num_buildings)")
        if np.unique(ids).shape[0] != n:
            raise ValidationError("record ids must be unique")
        for arr in (rssi, lon, lat, floor, building, ids):
            arr.flags.writeable = False
        object.__setattr__(self, "rssi", rssi)
        object.__setattr__(self, "longitude", lon)
        object.__setattr__(self, "latitude", lat)
        object.__setattr__(self, "floor", floor)
        object.__setattr__(self, "building", building)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return self.rssi.shape[0]

    @property
    def coords(self) -> np.ndarray:
        """(n, 2) array of (longitude, latitude)."""
        return np.column_stack([self.longitude, self.latitude])

    def record(self, i: int) -> tuple[Fingerprint, PositionLabel]:
        label = PositionLabel(float(self.longitude[i]), float(self.latitude[i]),
                              int(self.floor[i]), int(self.building[i]))
        return Fingerprint(self.rssi[i]), label

    def records(self) -> Iterator[tuple[Fingerprint, PositionLabel]]:
        for i in range(len(self)):
            yield self.record(i)

    def subset(self, indices: np.ndarray) -> Dataset:
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.rssi[idx], self.longitude[idx], self.latitude[idx],
                       self.floor[idx], self.building[idx], self.ids[idx], self.meta)

    def with_ids(self, ids: np.ndarray) -> Dataset:
        return Dataset(self.rssi, self.longitude, self.latitude,
                       self.floor, self.building, ids, self.meta)

    def with_fresh_ids(self) -> Dataset:
        """Renumber record ids to 0..n-1 (the ids an exported file would get)."""
        return self.with_ids(np.arange(len(self), dtype=np.int64))


@dataclass(frozen=True)
class SplitSpec:
    """70/10/20-style split fractions plus the permutation seed."""

    train_fraction: float = 0.7
    cal_fraction: float = 0.1
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        fractions = (self.train_fraction, self.cal_fraction, self.test_fraction)
        if any(f <= 0 for f in fractions):
            raise ConfigurationError("split fractions must each be > 0")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ConfigurationError("split fractions must sum to 1")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ConfigurationError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class SyntheticWorldConfig:
    """Log-distance path-loss world: RSSI(d) = tx - 10*exp*log10(max(d, 1m)) + noise.

    Access points are placed uniformly at random in the area, then sample
    positions are drawn, then per-(sample, AP) Gaussian noise, in that fixed
    order, so the same seed regenerates the identical world. Values below
    ``detect_floor_dbm`` become the sentinel 100. With ``num_floors`` or
    ``num_buildings`` > 1, labels come from equal strips of the area (floors
    along the height, buildings along the width).
    """

    area: tuple[float, float] = (60.0, 40.0)
    num_aps: int = 20
    tx_power_dbm: float = -30.0
    path_loss_exponent: float = 2.0
    noise_sigma_db: float = 4.0
    detect_floor_dbm: float = -95.0
    num_samples: int = 2000
    seed: int = 0
    num_floors: int = 1
    num_buildings: int = 1

    def __post_init__(self) -> None:
        width, height = self.area
        if width <= 0 or height <= 0:
            raise ConfigurationError("area dimensions must be positive")
        if self.num_aps < 1:
            raise ConfigurationError("num_aps must be >= 1")
        if self.num_samples < 1:
            raise ConfigurationError("num_samples must be >= 1")
        if self.noise_sigma_db < 0:
            raise ConfigurationError("noise_sigma_db must be >= 0")
        if self.num_floors < 1 or self.num_buildings < 1:
            raise ConfigurationError("num_floors and num_buildings must be >= 1")


def _wap_name(index: int) -> str:
    return f"WAP{index:03d}"


def parse_ujiindoorloc(csv_text: str) -> Dataset:
    """Parse a UJIIndoorLoc-format CSV into a Dataset.

    The header must contain a contiguous WAP001..WAP{W} block plus LONGITUDE,
    LATITUDE, FLOOR and BUILDINGID; extra columns (SPACEID, USERID, ...) are
    ignored. The sentinel 100 is kept verbatim. Floor/building counts are
    inferred from the observed label values.
    """
    reader = csv.reader(io.StringIO(csv_text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("empty input: no header row") from None
    header = [h.strip() for h in header]
    if header:
        header[0] = header[0].lstrip("﻿")  # tolerate a UTF-8 BOM
    positions = {name: i for i, name in enumerate(header)}

    wap_numbers = []
    for name in header:
        if name.startswith("WAP") and name[3:].isdigit():
            wap_numbers.append(int(name[3:]))
    if not wap_numbers:
        raise FormatError("missing mandatory column WAP001")
    num_aps = max(wap_numbers)
    seen = set(wap_numbers)
    for i in range(1, num_aps + 1):
        if i not in seen:
            raise FormatError(f"missing mandatory column {_wap_name(i)}")
    wap_cols = [positions[_wap_name(i)] for i in range(1, num_aps + 1)]
    for name in _LABEL_COLUMNS:
        if name not in positions:
            raise FormatError(f"missing mandatory column {name}")
    label_cols = [positions[name] for name in _LABEL_COLUMNS]

    n_fields = len(header)
    rssi_rows: list[list[float]] = []
    label_rows: list[list[float]] = []
    for row_num, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != n_fields:
            raise ParseError(
                f"row {row_num}: expected {n_fields} fields, got {len(row)}")
        try:
            rssi_rows.append([float(row[c]) for c in wap_cols])
            label_rows.append([float(row[c]) for c in label_cols])
        except ValueError:
            col = _find_bad_cell(row, wap_cols + label_cols, header)
            raise ParseError(f"row {row_num}, column {col}: non-numeric cell") from None

    n = len(rssi_rows)
    rssi = np.array(rssi_rows, dtype=np.float64).reshape(n, num_aps)
    labels = np.array(label_rows, dtype=np.float64).reshape(n, 4)
    floor_f, building_f = labels[:, 2], labels[:, 3]
    for name, values in (("FLOOR", floor_f), ("BUILDINGID", building_f)):
        if n and not np.all(values == np.floor(values)):
            bad = int(np.argmax(values != np.floor(values))) + 1
            raise ParseError(f"row {bad}, column {name}: expected an integer")
    floor = floor_f.astype(np.int64)
    building = building_f.astype(np.int64)
    if n and (floor.min() < 0 or building.min() < 0):
        raise ValidationError("FLOOR and BUILDINGID must be non-negative")
    meta = DatasetMeta(
        num_aps=num_aps,
        num_floors=int(floor.max()) + 1 if n else 0,
        num_buildings=int(building.max()) + 1 if n else 0,
    )
    return Dataset(rssi, labels[:, 0], labels[:, 1], floor, building,
                   np.arange(n, dtype=np.int64), meta)


def _find_bad_cell(row: list[str], cols: list[int], header: list[str]) -> str:
    for c in cols:
        try:
            float(row[c])
        except ValueError:
            return header[c]
    return "<unknown>"


def format_cell(value: float) -> str:
    """Canonical cell format: integers bare, other floats via shortest repr."""
    v = float(value)
    if math.isfinite(v) and v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def serialize_dataset(dataset: Dataset) -> str:
    """Emit the canonical CSV (WAP001..WAP{W}, LONGITUDE, LATITUDE, FLOOR,
    BUILDINGID) with LF line endings. Round-trips all numeric cells exactly."""
    w = dataset.meta.num_aps
    header = [_wap_name(i) for i in range(1, w + 1)] + list(_LABEL_COLUMNS)
    lines = [",".join(header)]
    fmt = format_cell
    for i in range(len(dataset)):
        cells = [fmt(v) for v in dataset.rssi[i]]
        cells.append(fmt(dataset.longitude[i]))
        cells.append(fmt(dataset.latitude[i]))
        cells.append(str(int(dataset.floor[i])))
        cells.append(str(int(dataset.building[i])))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def normalize_rssi(dataset: Dataset, scheme: str) -> Dataset:
    """Map raw dBm fingerprints into [0, 1].

    ``zero_penalty``: sentinel -> 0, value v -> (v + 104) / 104 clipped to
    [0, 1]. ``minmax_unit``: sentinel -> (global minimum detected value - 1 dB),
    then the whole table is min-max mapped to [0, 1].
    """
    if dataset.meta.normalization is not None:
        raise StateError(
            f"dataset already normalized with scheme {dataset.meta.normalization!r}")
    if scheme not in NORMALIZATION_SCHEMES:
        raise ConfigurationError(f"unknown normalization scheme {scheme!r}")
    sentinel_mask = dataset.rssi == SENTINEL
    if scheme == ZERO_PENALTY:
        out = np.clip((dataset.rssi + 104.0) / 104.0, 0.0, 1.0)
        out[sentinel_mask] = 0.0
    else:
        detected = dataset.rssi[~sentinel_mask]
        if detected.size == 0:
            raise ValidationError("minmax_unit needs at least one detected RSSI value")
        lo = float(detected.min()) - 1.0
        hi = float(detected.max())
        mapped = np.where(sentinel_mask, lo, dataset.rssi)
        out = (mapped - lo) / (hi - lo)
    meta = replace(dataset.meta, normalization=scheme)
    return Dataset(out, dataset.longitude, dataset.latitude, dataset.floor,
                   dataset.building, dataset.ids, meta)


def split_dataset(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded-permutation split into (train, cal, test).

    Sizes are floor(n * fraction) for cal and test; the rounding remainder
    goes to train. Record ids are preserved, so the three outputs are
    verifiably disjoint and their union is the input.
    """
    n = len(dataset)
    if n < 10:
        raise ContractError("split_dataset requires at least 10 records")
    n_cal = int(n * spec.cal_fraction)
    n_test = int(n * spec.test_fraction)
    n_train = n - n_cal - n_test
    if min(n_train, n_cal, n_test) == 0:
        raise ConfigurationError("split fractions leave an empty split")
    perm = np.random.default_rng(spec.seed).permutation(n)
    train = dataset.subset(perm[:n_train])
    cal = dataset.subset(perm[n_train:n_train + n_cal])
    test = dataset.subset(perm[n_train + n_cal:])
    return train, cal, test


def synthetic_access_points(config: SyntheticWorldConfig) -> np.ndarray:
    """(num_aps, 2) AP positions; the first draw of the world's RNG stream."""
    rng = np.random.default_rng(config.seed)
    width, height = config.area
    return rng.uniform((0.0, 0.0), (width, height), size=(config.num_aps, 2))


def generate_synthetic(config: SyntheticWorldConfig) -> Dataset:
    """Generate a raw (unnormalized) dataset from the synthetic RSSI world."""
    rng = np.random.default_rng(config.seed)
    width, height = config.area
    aps = rng.uniform((0.0, 0.0), (width, height), size=(config.num_aps, 2))
    pos = rng.uniform((0.0, 0.0), (width, height), size=(config.num_samples, 2))
    d = np.hypot(pos[:, None, 0] - aps[None, :, 0], pos[:, None, 1] - aps[None, :, 1])
    np.maximum(d, 1.0, out=d)
    rssi = config.tx_power_dbm - 10.0 * config.path_loss_exponent * np.log10(d)
    if config.noise_sigma_db > 0:
        rssi = rssi + rng.normal(0.0, config.noise_sigma_db,
                                 size=(config.num_samples, config.num_aps))
    rssi[rssi < config.detect_floor_dbm] = SENTINEL

    floor = np.minimum((pos[:, 1] / (height / config.num_floors)).astype(np.int64),
                       config.num_floors - 1)
    building = np.minimum((pos[:, 0] / (width / config.num_buildings)).astype(np.int64),
                          config.num_buildings - 1)
    meta = DatasetMeta(num_aps=config.num_aps, num_floors=config.num_floors,
                       num_buildings=config.num_buildings)
    return Dataset(rssi, pos[:, 0], pos[:, 1], floor, building,
                   np.arange(config.num_samples, dtype=np.int64), meta)
