"""Command-line pipeline: ingest, split, fit, calibrate, predict-sets, risk,
pvalue-filter, sweep, synth.

Every run is driven by a flat key=value config file plus flag overrides
(--seed, --alpha, --beta, --out, and repeatable --set KEY=VALUE). All
randomness flows from the single root seed through the documented stage-seed
derivation, so re-running any stage with the same config is byte-identical.

Config keys (defaults in parentheses):

    seed, out                         root seed / output directory
    dataset.csv                       input CSV path (exclusive with synth.*)
    synth.width (60) synth.height (40) synth.num_aps (20)
    synth.tx_power_dbm (-30) synth.path_loss_exponent (2.0)
    synth.noise_sigma_db (4.0) synth.detect_floor_dbm (-95)
    synth.num_samples (2000) synth.num_floors (1) synth.num_buildings (1)
    normalize.scheme (zero_penalty)   zero_penalty | minmax_unit
    split.train (0.7) split.cal (0.1) split.test (0.2)
    predictor.k (5) predictor.weighting (uniform)
    predictor.import.cal / predictor.import.test
                                      prediction CSVs (exclusive with knn keys;
                                      ids are 0-based rows of the split files)
    task (coords)                     coords | building | floor
    alpha (0.1)                       miscoverage level
    alpha.grid (table1)               'table1' or comma-separated levels
    beta (0.1) / beta.grid            risk level(s)
    risk.family (both)                fdr | fnr | both
    risk.bound (1.0) risk.grid.size (64) risk.grid.mode (geometric|exact)
    paths.csv                         path file (exclusive with paths synth)
    paths.num (100) paths.points (30) paths.membership (0.4)
    paths.error_sigma (2.0) paths.cal_fraction (0.5)
    report.format (csv)               csv | json
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path as FsPath

import numpy as np

from . import dataset as ds
from . import risk as rk
from .conformal import (
    class_prediction_set,
    conformal_quantile,
    region_prediction_set,
)
from .errors import ConfigurationError, ConflocError, ContractError
from .harness import (
    TABLE1_ALPHA_GRID,
    alpha_sweep,
    emit_report,
    render_report,
    report_filename,
    risk_sweep,
    write_text_atomic,
)
from .predictor import KnnConfig, fit_knn, import_predictions
from .pvalues import filter_points
from .scores import (
    CalibrationScores,
    kind_for_task,
    score_calibration_set,
    score_dataset,
)
from .seeds import derive_seed

COMMANDS = ("ingest", "split", "fit", "calibrate", "predict-sets", "risk",
            "pvalue-filter", "sweep", "synth")


def load_config_file(path: str) -> dict[str, str]:
    """Parse a flat key=value config file ('#' starts a comment)."""
    cfg: dict[str, str] = {}
    text = FsPath(path).read_text(encoding="utf-8")
    for line_num, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{line_num}: expected 'key = value'")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def _cfg_float(cfg: dict[str, str], key: str, default: float | None = None) -> float:
    if key not in cfg:
        if default is None:
            raise ConfigurationError(f"missing config key {key!r}")
        return default
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigurationError(f"config key {key!r}: expected a number, "
                                 f"got {cfg[key]!r}") from None


def _cfg_int(cfg: dict[str, str], key: str, default: int | None = None) -> int:
    value = _cfg_float(cfg, key, default if default is None else float(default))
    if value != int(value):
        raise ConfigurationError(f"config key {key!r}: expected an integer")
    return int(value)


def _synth_config(cfg: dict[str, str], seed: int) -> ds.SyntheticWorldConfig:
    return ds.SyntheticWorldConfig(
        area=(_cfg_float(cfg, "synth.width", 60.0), _cfg_float(cfg, "synth.height", 40.0)),
        num_aps=_cfg_int(cfg, "synth.num_aps", 20),
        tx_power_dbm=_cfg_float(cfg, "synth.tx_power_dbm", -30.0),
        path_loss_exponent=_cfg_float(cfg, "synth.path_loss_exponent", 2.0),
        noise_sigma_db=_cfg_float(cfg, "synth.noise_sigma_db", 4.0),
        detect_floor_dbm=_cfg_float(cfg, "synth.detect_floor_dbm", -95.0),
        num_samples=_cfg_int(cfg, "synth.num_samples", 2000),
        seed=seed,
        num_floors=_cfg_int(cfg, "synth.num_floors", 1),
        num_buildings=_cfg_int(cfg, "synth.num_buildings", 1),
    )


def _load_raw_dataset(cfg: dict[str, str], seed: int) -> ds.Dataset:
    has_file = "dataset.csv" in cfg
    has_synth = any(k.startswith("synth.") for k in cfg)
    if has_file and has_synth:
        raise ConfigurationError("configure exactly one dataset source: "
                                 "dataset.csv or synth.* keys, not both")
    if has_file:
        return ds.parse_ujiindoorloc(FsPath(cfg["dataset.csv"]).read_text(encoding="utf-8"))
    return ds.generate_synthetic(_synth_config(cfg, derive_seed(seed, "synth")))


def _prepared_splits(cfg: dict[str, str], seed: int):
    data = _load_raw_dataset(cfg, seed)
    scheme = cfg.get("normalize.scheme", ds.ZERO_PENALTY)
    data = ds.normalize_rssi(data, scheme)
    spec = ds.SplitSpec(
        train_fraction=_cfg_float(cfg, "split.train", 0.7),
        cal_fraction=_cfg_float(cfg, "split.cal", 0.1),
        test_fraction=_cfg_float(cfg, "split.test", 0.2),
        seed=derive_seed(seed, "split"),
    )
    return ds.split_dataset(data, spec)


class _SplitSource:
    """Routes predict_dataset calls to the imported table for each split."""

    def __init__(self, pairs):
        self._pairs = pairs

    def predict_dataset(self, data):
        for known, source in self._pairs:
            if known is data:
                return source.predict_dataset(known)
        raise ContractError("no imported predictions for this dataset")


def _prediction_source(cfg, train, cal, test):
    """Return (source, cal, test); imported splits are renumbered to row ids."""
    has_import = "predictor.import.cal" in cfg or "predictor.import.test" in cfg
    has_knn = "predictor.k" in cfg or "predictor.weighting" in cfg
    if has_import and has_knn:
        raise ConfigurationError("configure exactly one predictor source: "
                                 "knn keys or predictor.import.*, not both")
    if has_import:
        for key in ("predictor.import.cal", "predictor.import.test"):
            if key not in cfg:
                raise ConfigurationError(f"missing config key {key!r}")
        cal = cal.with_fresh_ids()
        test = test.with_fresh_ids()
        cal_table = import_predictions(
            FsPath(cfg["predictor.import.cal"]).read_text(encoding="utf-8"), cal)
        test_table = import_predictions(
            FsPath(cfg["predictor.import.test"]).read_text(encoding="utf-8"), test)
        return _SplitSource([(cal, cal_table), (test, test_table)]), cal, test
    config = KnnConfig(k=_cfg_int(cfg, "predictor.k", 5),
                       weighting=cfg.get("predictor.weighting", "uniform"))
    return fit_knn(train, config), cal, test


def _task(cfg) -> str:
    return cfg.get("task", "coords")


def _alphas(cfg) -> list[float]:
    spec = cfg.get("alpha.grid", "table1")
    if spec == "table1":
        return list(TABLE1_ALPHA_GRID)
    try:
        return [float(v) for v in spec.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"alpha.grid: expected numbers, got {spec!r}") from None


def _betas(cfg) -> list[float]:
    if "beta.grid" in cfg:
        try:
            return [float(v) for v in cfg["beta.grid"].split(",") if v.strip()]
        except ValueError:
            raise ConfigurationError("beta.grid: expected numbers") from None
    return [_cfg_float(cfg, "beta", 0.1)]


def _out_dir(cfg) -> FsPath:
    out = FsPath(cfg["out"]) if "out" in cfg else None
    if out is None:
        raise ConfigurationError("missing config key 'out' (or --out)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(cfg) -> int:
    return _cfg_int(cfg, "seed", None)


def cmd_synth(cfg) -> int:
    out = _out_dir(cfg)
    data = ds.generate_synthetic(_synth_config(cfg, derive_seed(_seed(cfg), "synth")))
    write_text_atomic(out / "dataset.csv", ds.serialize_dataset(data))
    print(f"wrote {out / 'dataset.csv'} ({len(data)} records, W={data.meta.num_aps})")
    return 0


def cmd_ingest(cfg) -> int:
    out = _out_dir(cfg)
    if "dataset.csv" not in cfg:
        raise ConfigurationError("ingest requires dataset.csv")
    data = ds.parse_ujiindoorloc(FsPath(cfg["dataset.csv"]).read_text(encoding="utf-8"))
    write_text_atomic(out / "canonical.csv", ds.serialize_dataset(data))
    meta = {"records": len(data), "num_aps": data.meta.num_aps,
            "num_floors": data.meta.num_floors, "num_buildings": data.meta.num_buildings}
    write_text_atomic(out / "dataset_meta.json", json.dumps(meta, indent=2) + "\n")
    print(f"ingested {len(data)} records (W={data.meta.num_aps})")
    return 0


def cmd_split(cfg) -> int:
    out = _out_dir(cfg)
    train, cal, test = _prepared_splits(cfg, _seed(cfg))
    for name, part in (("train", train), ("cal", cal), ("test", test)):
        write_text_atomic(out / f"{name}.csv", ds.serialize_dataset(part))
    meta = {"sizes": {"train": len(train), "cal": len(cal), "test": len(test)},
            "normalization": train.meta.normalization}
    write_text_atomic(out / "split_meta.json", json.dumps(meta, indent=2) + "\n")
    print(f"split sizes: train={len(train)} cal={len(cal)} test={len(test)}")
    return 0


def cmd_fit(cfg) -> int:
    out = _out_dir(cfg)
    if "predictor.import.cal" in cfg or "predictor.import.test" in cfg:
        raise ConfigurationError("fit applies to the built-in knn predictor only")
    train, _, _ = _prepared_splits(cfg, _seed(cfg))
    config = KnnConfig(k=_cfg_int(cfg, "predictor.k", 5),
                       weighting=cfg.get("predictor.weighting", "uniform"))
    model = fit_knn(train, config)
    model_dir = out / "model"
    model_dir.mkdir(parents=True, exist_ok=True)
    write_text_atomic(model_dir / "train_data.csv", ds.serialize_dataset(train))
    meta = {"k": config.k, "weighting": config.weighting, "distance": config.distance,
            "normalization": train.meta.normalization, "num_aps": train.meta.num_aps,
            "num_floors": train.meta.num_floors, "num_buildings": train.meta.num_buildings}
    write_text_atomic(model_dir / "model_meta.json", json.dumps(meta, indent=2) + "\n")
    print(f"fitted knn on {len(model)} records (k={config.k})")
    return 0


def _scores_and_quantile(cfg):
    train, cal, test = _prepared_splits(cfg, _seed(cfg))
    source, cal, test = _prediction_source(cfg, train, cal, test)
    task = _task(cfg)
    cal_scores = score_calibration_set(source, cal, task)
    alpha = _cfg_float(cfg, "alpha", 0.1)
    return source, cal, test, task, cal_scores, conformal_quantile(cal_scores, alpha)


def cmd_calibrate(cfg) -> int:
    out = _out_dir(cfg)
    train, cal, test = _prepared_splits(cfg, _seed(cfg))
    source, cal, test = _prediction_source(cfg, train, cal, test)
    task = _task(cfg)
    values = score_dataset(source, cal, task)
    cal_scores = CalibrationScores.from_values(values, kind_for_task(task))
    q = conformal_quantile(cal_scores, _cfg_float(cfg, "alpha", 0.1))
    lines = ["ID,SCORE"]
    for i in range(len(cal)):
        lines.append(f"{int(cal.ids[i])},{values[i]:.6f}")
    write_text_atomic(out / "calibration_scores.csv", "\n".join(lines) + "\n")
    payload = {"task": task, "kind": q.kind, "alpha": q.alpha, "n": q.n,
               "k_index": q.k_index,
               "value": q.value if math.isfinite(q.value) else
               ("inf" if q.value > 0 else "-inf")}
    write_text_atomic(out / "quantile.json", json.dumps(payload, indent=2) + "\n")
    print(f"quantile at alpha={q.alpha}: {payload['value']} (n={q.n}, k={q.k_index})")
    return 0


def cmd_predict_sets(cfg) -> int:
    out = _out_dir(cfg)
    source, _, test, task, _, q = _scores_and_quantile(cfg)
    preds = source.predict_dataset(test)
    rows = []
    if task == "coords":
        for i in range(len(test)):
            region = region_prediction_set(preds.coords[i], q)
            rows.append({"ID": int(test.ids[i]),
                         "CENTER_LON": region.center[0],
                         "CENTER_LAT": region.center[1],
                         "RADIUS": region.radius,
                         "CONTAINS_TRUTH": region.contains(
                             (test.longitude[i], test.latitude[i]))})
    else:
        probs = preds.building_probs if task == "building" else preds.floor_probs
        truths = test.building if task == "building" else test.floor
        for i in range(len(test)):
            pset = class_prediction_set(probs[i], q)
            rows.append({"ID": int(test.ids[i]),
                         "SIZE": len(pset),
                         "MEMBERS": ";".join(str(m) for m in sorted(pset.members)),
                         "CONTAINS_TRUTH": int(truths[i]) in pset})
    destination = out / "prediction_sets.csv"
    write_text_atomic(destination, render_report(rows, "csv"))
    covered = sum(1 for r in rows if r["CONTAINS_TRUTH"])
    print(f"wrote {destination} (coverage {covered / len(rows):.4f})")
    return 0


def _load_paths(cfg, seed: int) -> list[rk.Path]:
    if "paths.csv" in cfg:
        paths = rk.parse_paths_csv(FsPath(cfg["paths.csv"]).read_text(encoding="utf-8"))
        if any(s.predicted is None for p in paths for s in p.samples):
            paths = _predict_paths(cfg, paths)
        return paths
    return rk.generate_paths(
        n_paths=_cfg_int(cfg, "paths.num", 100),
        n_points=_cfg_int(cfg, "paths.points", 30),
        membership_rate=_cfg_float(cfg, "paths.membership", 0.4),
        error_sigma=_cfg_float(cfg, "paths.error_sigma", 2.0),
        seed=derive_seed(seed, "paths"),
    )


def _predict_paths(cfg, paths: list[rk.Path]) -> list[rk.Path]:
    """Fill missing path predictions with the knn model (zero_penalty only,
    since that normalization is stateless)."""
    if any(s.fingerprint is None for p in paths for s in p.samples):
        raise ConfigurationError(
            "path file must carry WAP columns or PRED_LON/PRED_LAT columns")
    scheme = cfg.get("normalize.scheme", ds.ZERO_PENALTY)
    if scheme != ds.ZERO_PENALTY:
        raise ConfigurationError(
            "path prediction from fingerprints requires normalize.scheme = "
            "zero_penalty (or provide PRED_LON/PRED_LAT columns)")
    train, _, _ = _prepared_splits(cfg, _seed(cfg))
    config = KnnConfig(k=_cfg_int(cfg, "predictor.k", 5),
                       weighting=cfg.get("predictor.weighting", "uniform"))
    model = fit_knn(train, config)
    out_paths = []
    for path in paths:
        raw = np.array([s.fingerprint.rssi for s in path.samples])
        sentinel = raw == ds.SENTINEL
        norm = np.clip((raw + 104.0) / 104.0, 0.0, 1.0)
        norm[sentinel] = 0.0
        preds = model.predict_fingerprints(norm)
        samples = tuple(
            rk.PathSample(s.truth, (preds.coords[j, 0], preds.coords[j, 1]),
                          s.membership, s.fingerprint)
            for j, s in enumerate(path.samples))
        out_paths.append(rk.Path(path.path_id, samples))
    return out_paths


def cmd_risk(cfg) -> int:
    out = _out_dir(cfg)
    seed = _seed(cfg)
    paths = _load_paths(cfg, seed)
    if len(paths) < 2:
        raise ConfigurationError("risk calibration needs at least 2 paths")
    cal_fraction = _cfg_float(cfg, "paths.cal_fraction", 0.5)
    perm = np.random.default_rng(derive_seed(seed, "paths-split")).permutation(len(paths))
    n_cal = max(1, int(len(paths) * cal_fraction))
    if n_cal >= len(paths):
        n_cal = len(paths) - 1
    cal_paths = [paths[i] for i in perm[:n_cal]]
    test_paths = [paths[i] for i in perm[n_cal:]]

    families = {"fdr": (rk.FDR,), "fnr": (rk.FNR,), "both": (rk.FDR, rk.FNR)}[
        cfg.get("risk.family", "both")]
    bound = _cfg_float(cfg, "risk.bound", 1.0)
    if cfg.get("risk.grid.mode", "geometric") == "exact":
        grid = rk.observed_error_grid(cal_paths)
    else:
        grid = rk.geometric_error_grid(cal_paths, _cfg_int(cfg, "risk.grid.size", 64))
    rows = []
    for family in families:
        rows.extend(risk_sweep(cal_paths, test_paths, _betas(cfg), family,
                               lambda_grid=grid, bound=bound, seed=seed))
    fmt = cfg.get("report.format", "csv")
    destination = out / report_filename("risk", cfg.get("risk.family", "both"), seed, fmt)
    emit_report(rows, fmt, destination)
    for row in rows:
        print(f"{row.family} beta={row.beta}: lambda_hat={row.lambda_hat:.6f} "
              f"test_risk={row.test_risk:.6f}")
    return 0


def cmd_pvalue_filter(cfg) -> int:
    out = _out_dir(cfg)
    seed = _seed(cfg)
    train, cal, test = _prepared_splits(cfg, seed)
    source, cal, test = _prediction_source(cfg, train, cal, test)
    task = _task(cfg)
    cal_scores = score_calibration_set(source, cal, task)
    test_values = score_dataset(source, test, task)
    alpha = _cfg_float(cfg, "alpha", 0.1)
    report = filter_points(
        [(int(test.ids[i]), float(test_values[i])) for i in range(len(test))],
        cal_scores, alpha)
    rows = [{"ID": r.point_id, "SCORE": r.score, "PVALUE": r.pvalue,
             "RETAINED": r.retained} for r in report.rows]
    fmt = cfg.get("report.format", "csv")
    destination = out / report_filename("pvalue_filter", task, seed, fmt)
    emit_report(rows, fmt, destination)
    kept = len(report.retained_ids)
    print(f"retained {kept}/{len(rows)} points at alpha={alpha}")
    return 0


def cmd_sweep(cfg) -> int:
    out = _out_dir(cfg)
    seed = _seed(cfg)
    train, cal, test = _prepared_splits(cfg, seed)
    source, cal, test = _prediction_source(cfg, train, cal, test)
    task = _task(cfg)
    rows = alpha_sweep(source, cal, test, _alphas(cfg), task, seed=seed)
    fmt = cfg.get("report.format", "csv")
    destination = out / report_filename("sweep", task, seed, fmt)
    emit_report(rows, fmt, destination)
    print(f"wrote {destination} ({len(rows)} rows)")
    return 0


DISPATCH = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "split": cmd_split,
    "fit": cmd_fit,
    "calibrate": cmd_calibrate,
    "predict-sets": cmd_predict_sets,
    "risk": cmd_risk,
    "pvalue-filter": cmd_pvalue_filter,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="confloc",
        description="Conformal prediction toolkit for fingerprint indoor positioning")
    sub = parser.add_subparsers(dest="command", required=True, metavar="|".join(COMMANDS))
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--seed", type=int, help="root seed (overrides config)")
        sp.add_argument("--alpha", type=float, help="miscoverage level")
        sp.add_argument("--beta", type=float, help="target risk level")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--set", action="append", default=[], dest="overrides",
                        metavar="KEY=VALUE", help="override any config key")
    return parser


def _merge_config(args: argparse.Namespace) -> dict[str, str]:
    cfg = load_config_file(args.config) if args.config else {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg[key.strip()] = value.strip()
    for key in ("seed", "alpha", "beta", "out"):
        value = getattr(args, key)
        if value is not None:
            cfg[key] = str(value)
    return cfg


def run_command(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _merge_config(args)
        return DISPATCH[args.command](cfg)
    except ConflocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
