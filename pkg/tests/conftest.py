import numpy as np
import pytest

from confloc.dataset import (
    Dataset,
    DatasetMeta,
    SplitSpec,
    SyntheticWorldConfig,
    generate_synthetic,
    normalize_rssi,
    split_dataset,
)
from confloc.predictor import KnnConfig, fit_knn


def make_dataset(rssi, lon, lat, floor, building, normalization=None):
    """Hand-built dataset with ids 0..n-1 and inferred meta."""
    rssi = np.atleast_2d(np.asarray(rssi, dtype=float))
    floor = np.asarray(floor, dtype=np.int64)
    building = np.asarray(building, dtype=np.int64)
    meta = DatasetMeta(
        num_aps=rssi.shape[1],
        num_floors=int(floor.max()) + 1,
        num_buildings=int(building.max()) + 1,
        normalization=normalization,
    )
    return Dataset(rssi, np.asarray(lon, dtype=float), np.asarray(lat, dtype=float),
                   floor, building, np.arange(rssi.shape[0], dtype=np.int64), meta)


@pytest.fixture(scope="session")
def world():
    """A 600-sample multi-class synthetic world, normalized and split."""
    config = SyntheticWorldConfig(num_samples=600, num_aps=12, noise_sigma_db=3.0,
                                  seed=101, num_floors=3, num_buildings=2)
    data = normalize_rssi(generate_synthetic(config), "zero_penalty")
    train, cal, test = split_dataset(data, SplitSpec(0.5, 0.25, 0.25, seed=202))
    return {"data": data, "train": train, "cal": cal, "test": test}


@pytest.fixture(scope="session")
def knn(world):
    return fit_knn(world["train"], KnnConfig(k=5, weighting="inverse_distance"))
