"""Probability calibration for classifiers that predict from incomplete sequences."""

from .calibrators import (
    AffineLogitCalibrator,
    BetaCalibrator,
    CalibrationWarning,
    Calibrator,
    HistogramCalibrator,
    IdentityCalibrator,
    IllConditionedWarning,
    IsotonicCalibrator,
    OneVsRestCalibrator,
    PlattCalibrator,
    TemperatureCalibrator,
    apply,
    fit_affine,
    fit_beta,
    fit_dirichlet,
    fit_histogram,
    fit_identity,
    fit_isotonic,
    fit_matrix_scaling,
    fit_platt,
    fit_platt_ovr,
    fit_temperature,
    fit_vector_scaling,
    pava,
)
from .core import (
    CalibrationError,
    Dataset,
    DegenerateFitError,
    InsufficientDataError,
    InvalidInputError,
    OptimizationError,
    PredictionRecord,
    binary_sigmoid,
    clamp_probability,
    softmax,
    to_onehot,
)
from .harness import (
    RankComparison,
    SyntheticSpec,
    TruncationPlan,
    ece_by_length,
    fit_method,
    friedman_nemenyi,
    generate_synthetic,
    reliability_data,
    run_experiment,
    truncate_augment,
    truncate_dataset,
)
from .metrics import (
    BinningSpec,
    MetricsReport,
    accuracy,
    bin_stats,
    brier,
    classwise_ece,
    ece,
    evaluate,
    nll,
)
from .optimize import OptimizerConfig, minimize_nll
from .persistence import load_calibrator, save_calibrator
from .temporal import (
    ContinuousTemporalCalibrator,
    DiscreteTemporalCalibrator,
    ExponentialTemperature,
    TemporalKey,
    apply_continuous,
    apply_discrete,
    fit_continuous,
    fit_discrete,
    g_eval,
)

__version__ = "0.1.0"

__all__ = [
    "accuracy",
    "AffineLogitCalibrator",
    "apply",
    "apply_continuous",
    "apply_discrete",
    "BetaCalibrator",
    "bin_stats",
    "binary_sigmoid",
    "BinningSpec",
    "brier",
    "CalibrationError",
    "CalibrationWarning",
    "Calibrator",
    "clamp_probability",
    "classwise_ece",
    "ContinuousTemporalCalibrator",
    "Dataset",
    "DegenerateFitError",
    "DiscreteTemporalCalibrator",
    "ece",
    "ece_by_length",
    "evaluate",
    "ExponentialTemperature",
    "fit_affine",
    "fit_beta",
    "fit_continuous",
    "fit_dirichlet",
    "fit_discrete",
    "fit_histogram",
    "fit_identity",
    "fit_isotonic",
    "fit_matrix_scaling",
    "fit_method",
    "fit_platt",
    "fit_platt_ovr",
    "fit_temperature",
    "fit_vector_scaling",
    "friedman_nemenyi",
    "g_eval",
    "generate_synthetic",
    "HistogramCalibrator",
    "IdentityCalibrator",
    "IllConditionedWarning",
    "InsufficientDataError",
    "InvalidInputError",
    "IsotonicCalibrator",
    "load_calibrator",
    "MetricsReport",
    "minimize_nll",
    "nll",
    "OneVsRestCalibrator",
    "OptimizationError",
    "OptimizerConfig",
    "pava",
    "PlattCalibrator",
    "PredictionRecord",
    "RankComparison",
    "reliability_data",
    "run_experiment",
    "save_calibrator",
    "softmax",
    "SyntheticSpec",
    "TemperatureCalibrator",
    "TemporalKey",
    "to_onehot",
    "truncate_augment",
    "truncate_dataset",
    "TruncationPlan",
]
