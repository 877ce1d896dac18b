"""confloc: model-agnostic conformal prediction for fingerprint-based indoor
positioning. Calibrated prediction sets with coverage guarantees, conformal
risk control for path-navigation error rates, and conformal p-value filtering
of unreliable position fixes."""

from .conformal import (
    ClassPredictionSet,
    ConformalQuantile,
    RegionPredictionSet,
    average_set_size,
    class_prediction_set,
    conformal_quantile,
    evaluate_coverage,
    region_prediction_set,
)
from .dataset import (
    Dataset,
    DatasetMeta,
    Fingerprint,
    PositionLabel,
    SplitSpec,
    SyntheticWorldConfig,
    generate_synthetic,
    normalize_rssi,
    parse_ujiindoorloc,
    serialize_dataset,
    split_dataset,
)
from .errors import (
    ConfigurationError,
    ConflocError,
    ContractError,
    CoverageError,
    FormatError,
    ParseError,
    StateError,
    ValidationError,
)
from .harness import (
    TABLE1_ALPHA_GRID,
    SweepRow,
    TrialReport,
    aggregate_sweeps,
    alpha_sweep,
    emit_report,
    risk_sweep,
)
from .predictor import (
    KnnConfig,
    KnnModel,
    PredictionOutput,
    PredictionTable,
    Predictions,
    export_predictions,
    fit_knn,
    import_predictions,
    predict,
)
from .pvalues import (
    FilterReport,
    PValue,
    filter_points,
    path_calibration_scores,
    pvalue,
    superuniformity_check,
)
from .risk import (
    LambdaCalibration,
    LossCurve,
    Path,
    PathSample,
    RiskConfig,
    build_loss_curve,
    calibrate_lambda,
    empirical_risk,
    evaluate_risk,
    fdr_path_loss,
    fnr_path_loss,
    generate_paths,
    parse_paths_csv,
    serialize_paths,
)
from .scores import (
    CalibrationScores,
    class_score,
    distance_score,
    max_aggregate,
    score_calibration_set,
)
from .seeds import derive_seed

__version__ = "0.1.0"
