"""Clinical judgement of forecasts: event detection, risk scores, and
regression/classification metrics.

Event detection slides a window of the minimum event duration ``t`` over
the target segment: the actual flag fires when any window contains a
labeled sample, the predicted flag when any window holds more than 0.8*t
forecast samples at or below the 65 mmHg threshold. Note the deliberate
asymmetry: labels are defined by MAP strictly below threshold, while
prediction counting uses at-or-below. The risk score is the continuous
relaxation of the same decision statistic (best window fraction), so
``j_prediction`` is exactly ``risk_score > 0.8``.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .network import (
    ForecastResult,
    ModelConfig,
    ModelParams,
    config_to_dict,
    rollout,
)
from .autodiff import Tensor
from .preprocess import denormalize_all, identity_stats, normalize
from .windows import WindowInstance

logger = logging.getLogger(__name__)

MAP_THRESHOLD = 65.0
DECISION_FRACTION = 0.8


@dataclass
class EventJudgement:
    """Instance-level outcome: actual event, predicted event, risk score."""

    j_actual: bool
    j_prediction: bool
    risk_score: float


def _window_counts(values: np.ndarray, t: int) -> np.ndarray:
    return np.convolve(values.astype(np.int64), np.ones(t, dtype=np.int64),
                       mode="valid")


def detect_events(pred_map, labels, t: int,
                  threshold: float = MAP_THRESHOLD) -> tuple[bool, bool]:
    """Window scan for actual and predicted hypotensive events.

    For every window start i in [0, T - t]: the actual flag is set when
    sum(labels[i:i+t]) > 0; the predicted flag when the count of forecast
    samples <= threshold within the window exceeds 0.8 * t.
    """
    pred_map = np.asarray(pred_map, dtype=np.float64)
    labels = np.asarray(labels)
    if pred_map.shape != labels.shape or pred_map.ndim != 1:
        raise ValueError(
            f"pred/labels must be equal-length 1-D, got {pred_map.shape} "
            f"and {labels.shape}"
        )
    T = pred_map.shape[0]
    if not 1 <= t <= T:
        raise ValueError(f"event duration t={t} out of range for length {T}")
    actual_sums = _window_counts(labels != 0, t)
    pred_counts = _window_counts(pred_map <= threshold, t)
    j_actual = bool((actual_sums > 0).any())
    j_prediction = bool((pred_counts > DECISION_FRACTION * t).any())
    return j_actual, j_prediction


def risk_score(pred_map, t: int, threshold: float = MAP_THRESHOLD) -> float:
    """Best windowed fraction of forecast samples at or below threshold."""
    pred_map = np.asarray(pred_map, dtype=np.float64)
    T = pred_map.shape[0]
    if not 1 <= t <= T:
        raise ValueError(f"event duration t={t} out of range for length {T}")
    counts = _window_counts(pred_map <= threshold, t)
    return float(counts.max() / t)


def judge_instance(pred_map, labels, t: int,
                   threshold: float = MAP_THRESHOLD) -> EventJudgement:
    j_actual, j_prediction = detect_events(pred_map, labels, t, threshold)
    return EventJudgement(
        j_actual=j_actual,
        j_prediction=j_prediction,
        risk_score=risk_score(pred_map, t, threshold),
    )


def auc(scores, positives) -> float | None:
    """Rank-based (Mann-Whitney) AUC with ties counted one half.

    Returns None with a warning when only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape:
        raise ValueError("scores and positives must have equal length")
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        logger.warning(
            "AUC undefined: need both classes, got %d positive / %d negative",
            n_pos, n_neg,
        )
        return None
    ranks = rankdata(scores)
    u = ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def classification_metrics(judgements: list[EventJudgement]
                           ) -> tuple[float, float | None]:
    """(accuracy %, recall %); recall is None without positive instances."""
    if not judgements:
        raise ValueError("classification_metrics requires judgements")
    correct = sum(j.j_prediction == j.j_actual for j in judgements)
    accuracy = 100.0 * correct / len(judgements)
    positives = [j for j in judgements if j.j_actual]
    if not positives:
        return accuracy, None
    hits = sum(j.j_prediction for j in positives)
    return accuracy, 100.0 * hits / len(positives)


@dataclass
class RegressionMetrics:
    mse: float
    mae: float
    mse_hypo: float | None
    mae_hypo: float | None


def regression_metrics(pred_map, target_map, labels) -> RegressionMetrics:
    """MSE/MAE over all samples and restricted to labeled hypotensive ones.

    The restricted metrics are None (absent), not zero, when no sample is
    labeled.
    """
    pred_map = np.asarray(pred_map, dtype=np.float64)
    target_map = np.asarray(target_map, dtype=np.float64)
    labels = np.asarray(labels)
    if not (pred_map.shape == target_map.shape == labels.shape):
        raise ValueError("pred/target/labels must have equal shapes")
    err = pred_map - target_map
    mse = float(np.mean(err ** 2))
    mae = float(np.mean(np.abs(err)))
    mask = labels != 0
    if not mask.any():
        return RegressionMetrics(mse, mae, None, None)
    return RegressionMetrics(
        mse, mae,
        float(np.mean(err[mask] ** 2)),
        float(np.mean(np.abs(err[mask]))),
    )


@dataclass
class MetricsReport:
    """Aggregate evaluation of one model over one split."""

    mse_overall: float
    mae_overall: float
    mse_hypo: float | None
    mae_hypo: float | None
    auc: float | None
    accuracy_pct: float
    recall_pct: float | None
    n_instances: int
    n_positive: int
    fingerprint: str


def dataset_fingerprint(instances: list[WindowInstance]) -> str:
    digest = hashlib.sha256()
    for w in instances:
        digest.update(f"{w.patient_id}:{w.start_index};".encode("utf-8"))
    return f"{len(instances)}:{digest.hexdigest()[:16]}"


def forecast_targets(params: ModelParams, config: ModelConfig,
                     instances: list[WindowInstance],
                     batch_size: int = 64) -> np.ndarray:
    """Model forecasts for the target segment of each instance, in mmHg.

    Runs the rollout in batches, strips the lead-time gap, and
    de-normalizes with each instance's own context statistics. Returns
    [n, tau, 2].
    """
    skip = instances[0].skip_len
    outputs = []
    for i in range(0, len(instances), batch_size):
        batch = instances[i : i + batch_size]
        ctx = np.stack([w.context for w in batch])
        if config.use_norm:
            ctx_n, stats = normalize(ctx)
        else:
            ctx_n, stats = ctx, identity_stats(2)
        pred_n = rollout(
            Tensor(ctx_n.astype(params.dtype())), params, config
        ).data.astype(np.float64)
        if config.use_norm:
            pred = denormalize_all(pred_n, stats)
        else:
            pred = pred_n
        outputs.append(pred[:, skip:, :])
    return np.concatenate(outputs, axis=0)


def evaluate_forecasts(pred_targets: np.ndarray,
                       instances: list[WindowInstance], t: int,
                       threshold: float = MAP_THRESHOLD) -> MetricsReport:
    """Aggregate per-instance judgements and pooled regression metrics.

    ``pred_targets`` holds the MAP forecasts for the target segment,
    [n, tau] or [n, tau, 2] with MAP first. Hypotensive-segment MSE/MAE
    pool every labeled sample across instances before averaging.
    """
    if len(instances) == 0:
        raise ValueError("evaluation requires a non-empty split")
    pred_targets = np.asarray(pred_targets, dtype=np.float64)
    pred_map = pred_targets[..., 0] if pred_targets.ndim == 3 else pred_targets

    judgements = []
    scores = []
    for i, w in enumerate(instances):
        judgements.append(judge_instance(pred_map[i], w.labels, t, threshold))
        scores.append(judgements[-1].risk_score)

    all_pred = pred_map.reshape(-1)
    all_target = np.concatenate([w.target_map for w in instances])
    all_labels = np.concatenate([w.labels for w in instances])
    reg = regression_metrics(all_pred, all_target, all_labels)
    accuracy, recall = classification_metrics(judgements)
    positives = np.array([j.j_actual for j in judgements])
    return MetricsReport(
        mse_overall=reg.mse,
        mae_overall=reg.mae,
        mse_hypo=reg.mse_hypo,
        mae_hypo=reg.mae_hypo,
        auc=auc(np.array(scores), positives),
        accuracy_pct=accuracy,
        recall_pct=recall,
        n_instances=len(instances),
        n_positive=int(positives.sum()),
        fingerprint=dataset_fingerprint(instances),
    )


def evaluate_model(params: ModelParams, config: ModelConfig,
                   instances: list[WindowInstance], t: int,
                   threshold: float = MAP_THRESHOLD,
                   batch_size: int = 64) -> MetricsReport:
    """Forecast every instance and judge the target segments."""
    if not instances:
        raise ValueError("evaluation requires a non-empty split")
    preds = forecast_targets(params, config, instances, batch_size)
    return evaluate_forecasts(preds, instances, t, threshold)


def persistence_baseline(context: np.ndarray, horizon: int) -> ForecastResult:
    """Repeat the final context MAP/SBP values across the horizon."""
    context = np.asarray(context, dtype=np.float64)
    if context.size == 0:
        raise ValueError("persistence baseline requires a non-empty context")
    last = context[-1]
    pred = np.tile(last, (horizon, 1))
    return ForecastResult(
        pred_map=pred[:, 0].copy(),
        pred_sbp=pred[:, 1].copy(),
        normalized_patches=pred.copy(),
        stats=identity_stats(2),
    )


def evaluate_persistence(instances: list[WindowInstance], t: int,
                         threshold: float = MAP_THRESHOLD) -> MetricsReport:
    """MetricsReport for the persistence forecaster on a split."""
    if not instances:
        raise ValueError("evaluation requires a non-empty split")
    tau = len(instances[0].target_map)
    preds = np.stack([
        persistence_baseline(w.context, w.skip_len + tau).pred_map[w.skip_len:]
        for w in instances
    ])
    return evaluate_forecasts(preds, instances, t, threshold)


def report_json(report: MetricsReport, config: ModelConfig | None = None,
                extra: dict | None = None) -> str:
    """Serialize a report (plus config echo) as a stable JSON document."""
    doc = {"metrics": asdict(report)}
    if config is not None:
        doc["config"] = config_to_dict(config)
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
