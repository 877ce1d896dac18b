import json

import numpy as np
import pytest

from confloc.errors import ConfigurationError, ContractError
from confloc.harness import (
    TABLE1_ALPHA_GRID,
    SweepRow,
    aggregate_sweeps,
    alpha_sweep,
    emit_report,
    render_report,
    report_filename,
    risk_sweep,
)
from confloc.risk import generate_paths


def test_default_alpha_grid_shape():
    assert len(TABLE1_ALPHA_GRID) == 20
    assert TABLE1_ALPHA_GRID[0] == 0.0
    assert TABLE1_ALPHA_GRID[-1] == 1.0
    assert all(a < b for a, b in zip(TABLE1_ALPHA_GRID, TABLE1_ALPHA_GRID[1:]))


def test_alpha_zero_covers_everything(world, knn):
    rows = alpha_sweep(knn, world["cal"], world["test"], [0.0], "coords")
    assert rows[0].empirical_coverage == 1.0
    rows_f = alpha_sweep(knn, world["cal"], world["test"], [0.0], "floor")
    assert rows_f[0].empirical_coverage == 1.0
    assert rows_f[0].avg_set_size == world["cal"].meta.num_floors


def test_sweep_monotone_in_alpha(world, knn):
    rows = alpha_sweep(knn, world["cal"], world["test"], TABLE1_ALPHA_GRID, "floor",
                       seed=5)
    coverages = [r.empirical_coverage for r in rows]
    sizes = [r.avg_set_size for r in rows]
    assert all(a >= b for a, b in zip(coverages, coverages[1:]))
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))
    assert all(r.n_cal == len(world["cal"]) and r.n_test == len(world["test"])
               for r in rows)


def test_sweep_coords_rows_have_no_set_size(world, knn):
    rows = alpha_sweep(knn, world["cal"], world["test"], [0.1, 0.2], "coords")
    assert all(r.avg_set_size is None for r in rows)
    radii_cover = [r.empirical_coverage for r in rows]
    assert radii_cover[0] >= radii_cover[1]


def test_sweep_rerun_identical(world, knn):
    a = alpha_sweep(knn, world["cal"], world["test"], [0.1, 0.3], "building", seed=1)
    b = alpha_sweep(knn, world["cal"], world["test"], [0.1, 0.3], "building", seed=1)
    assert a == b


def test_aggregate_consistent_with_rows():
    rows = [SweepRow(0.1, 0.9, 0.91, 2.0, 50, 100, seed=1),
            SweepRow(0.1, 0.9, 0.89, 4.0, 50, 100, seed=2),
            SweepRow(0.2, 0.8, 0.79, 1.0, 50, 100, seed=1)]
    report = aggregate_sweeps(rows)
    agg = {a.alpha: a for a in report.aggregates}
    assert agg[0.1].n_trials == 2
    assert agg[0.1].mean_coverage == pytest.approx((0.91 + 0.89) / 2)
    assert agg[0.1].std_coverage == pytest.approx(np.std([0.91, 0.89]))
    assert agg[0.1].mean_set_size == pytest.approx(3.0)
    assert agg[0.2].n_trials == 1


def test_risk_sweep_degenerate_beta_one():
    paths = generate_paths(10, 12, 0.5, 2.0, seed=3)
    grid = np.geomspace(0.01, 100.0, 16)
    rows = risk_sweep(paths[:5], paths[5:], [1.0], "fdr", lambda_grid=grid)
    assert rows[0].lambda_hat == grid[0]
    assert rows[0].satisfied


def test_risk_sweep_hand_paths():
    import math

    from confloc.risk import Path, PathSample

    def path_from_errors(errs, members, pid):
        return Path(pid, tuple(
            PathSample((0.0, 0.0), (math.sqrt(e), 0.0), m)
            for e, m in zip(errs, members)))

    cal = [path_from_errors([1.0, 4.0], [1, 1], "c0"),
           path_from_errors([9.0, 16.0], [1, 1], "c1"),
           path_from_errors([1.0, 25.0], [1, 0], "c2")]
    test = [path_from_errors([4.0, 9.0], [1, 1], "t0")]
    grid = np.array([0.5, 5.0, 10.0, 20.0, 30.0])
    rows = risk_sweep(cal, test, [0.5], "fdr", lambda_grid=grid)
    # hand scan: threshold = 0.5 - 0.5/3 = 1/3; FDR means over the grid:
    #   lam=0.5 -> (1, 1, 1)/3 = 1; lam=5 -> (0, 1, 0)/3 = 1/3 <= 1/3 qualifies
    assert rows[0].lambda_hat == 5.0
    # test FDR at 5: errors {4, 9}, path points both: 1/2
    assert rows[0].test_risk == pytest.approx(0.5)


def test_emit_report_deterministic(tmp_path):
    rows = [SweepRow(0.1, 0.9, 0.905, None, 50, 100, seed=7)]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    emit_report(rows, "csv", a)
    emit_report(rows, "csv", b)
    assert a.read_bytes() == b.read_bytes()
    text = a.read_text()
    assert text.endswith("\n")
    assert "\r" not in text
    header, line = text.strip().split("\n")
    assert header == "alpha,target_coverage,empirical_coverage,avg_set_size,n_cal,n_test,seed"
    assert line == "0.100000,0.900000,0.905000,,50,100,7"


def test_emit_report_csv_roundtrip_at_6_decimals(tmp_path):
    rows = [SweepRow(0.052, 0.948, 2 / 3, 1.23456789, 10, 20, seed=3)]
    destination = tmp_path / "r.csv"
    emit_report(rows, "csv", destination)
    # independent reader: plain line split
    header, line = destination.read_text().strip().split("\n")
    cells = line.split(",")
    named = dict(zip(header.split(","), cells))
    assert float(named["empirical_coverage"]) == pytest.approx(2 / 3, abs=5e-7)
    assert named["avg_set_size"] == "1.234568"


def test_emit_report_json(tmp_path):
    rows = [SweepRow(0.1, 0.9, 0.905, None, 50, 100, seed=7)]
    destination = tmp_path / "r.json"
    emit_report(rows, "json", destination)
    payload = json.loads(destination.read_text())
    assert payload[0]["avg_set_size"] is None
    assert payload[0]["empirical_coverage"] == 0.905
    assert payload[0]["n_cal"] == 50


def test_emit_report_validation(tmp_path):
    with pytest.raises(ContractError):
        render_report([], "csv")
    with pytest.raises(ConfigurationError):
        render_report([{"a": 1}], "xml")


def test_report_filename():
    assert report_filename("sweep", "coords", 42) == "sweep_coords_42.csv"
    assert report_filename("risk", "fdr", 1, "json") == "risk_fdr_1.json"
