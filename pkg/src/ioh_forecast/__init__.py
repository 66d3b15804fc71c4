"""Intraoperative hypotension forecasting from MAP/SBP vital-sign series.

The pipeline: synthesize or ingest vitals, cut them into labeled
context/skip/target windows, train a decomposition + patch-Transformer
forecaster on rollout MSE, and judge hypotensive events on the forecast
horizon. ``IOHForecaster`` wraps the whole thing in a scikit-learn style
estimator; the submodules expose each stage directly.
"""

from .autodiff import GradTape, ShapeMismatchError, Tensor, backward, finite_diff_grad
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .estimator import IOHForecaster, SymmetricNormalizer, TrendSeasonalDecomposer
from .evaluation import (
    EventJudgement,
    MetricsReport,
    auc,
    classification_metrics,
    detect_events,
    evaluate_model,
    evaluate_persistence,
    persistence_baseline,
    regression_metrics,
    risk_score,
)
from .network import (
    ForecastResult,
    ModelConfig,
    ModelParams,
    autoregressive_forecast,
    init_params,
)
from .optim import Adam, clip_global_norm
from .preprocess import NormStats, decompose, denormalize, normalize
from .training import TrainConfig, TrainLog, mse_loss, overfit_sanity, train
from .vitals import (
    CohortConfig,
    VitalSeries,
    clean_artifacts,
    compute_map,
    ingest_csv,
    synth_cohort,
)
from .windows import WindowInstance, label_hypotension, make_windows, split_dataset

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "CheckpointError",
    "CohortConfig",
    "EventJudgement",
    "ForecastResult",
    "GradTape",
    "IOHForecaster",
    "MetricsReport",
    "ModelConfig",
    "ModelParams",
    "NormStats",
    "ShapeMismatchError",
    "SymmetricNormalizer",
    "Tensor",
    "TrainConfig",
    "TrainLog",
    "TrendSeasonalDecomposer",
    "VitalSeries",
    "WindowInstance",
    "auc",
    "autoregressive_forecast",
    "backward",
    "classification_metrics",
    "clean_artifacts",
    "clip_global_norm",
    "compute_map",
    "decompose",
    "denormalize",
    "detect_events",
    "evaluate_model",
    "evaluate_persistence",
    "finite_diff_grad",
    "ingest_csv",
    "init_params",
    "label_hypotension",
    "load_checkpoint",
    "make_windows",
    "mse_loss",
    "normalize",
    "overfit_sanity",
    "persistence_baseline",
    "regression_metrics",
    "risk_score",
    "save_checkpoint",
    "split_dataset",
    "synth_cohort",
    "train",
]
