"""Scikit-learn style wrappers around the forecasting pipeline.

``IOHForecaster`` exposes the trainable model through the familiar
fit/predict/get_params surface so it drops into sklearn tooling
(cloning, grid search over the constructor parameters, pipelines that
pass 3-D arrays through). The two preprocessing stages are available as
transformers with the usual transform/inverse_transform pairing.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .evaluation import evaluate_model
from .network import (
    ForecastResult,
    ModelConfig,
    autoregressive_forecast,
    init_params,
)
from .preprocess import decompose, denormalize_all, normalize
from .training import TrainConfig, dataset_loss, train
from .windows import WindowInstance


def check_series_array(X, n_channels: int = 2, name: str = "X") -> np.ndarray:
    """Validate a [n_instances, length, channels] float array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[-1] != n_channels:
        raise ValueError(
            f"{name} must be [n_instances, length, {n_channels}], "
            f"got shape {X.shape}"
        )
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite values")
    return X


def _instances_from_arrays(X: np.ndarray, y: np.ndarray,
                           skip_len: int) -> list[WindowInstance]:
    instances = []
    for i in range(X.shape[0]):
        instances.append(WindowInstance(
            context=X[i],
            skip_len=skip_len,
            target_map=y[i, :, 0],
            target_sbp=y[i, :, 1],
            labels=np.zeros(y.shape[1], dtype=np.int64),
            patient_id=f"array-{i}",
            start_index=i,
        ))
    return instances


class SymmetricNormalizer(TransformerMixin, BaseEstimator):
    """Per-instance standardization with exact inversion.

    ``transform`` standardizes every instance by its own per-channel
    statistics (stateless across instances, so ``fit`` is a no-op) and
    remembers the statistics of the last batch; ``inverse_transform``
    maps model outputs back with them.
    """

    def fit(self, X, y=None):
        check_series_array(X)
        return self

    def transform(self, X):
        X = check_series_array(X)
        normalized, self.stats_ = normalize(X)
        return normalized

    def inverse_transform(self, Y):
        if not hasattr(self, "stats_"):
            raise NotFittedError("transform must run before inverse_transform")
        Y = check_series_array(Y)
        if Y.shape[0] != self.stats_.mean.shape[0]:
            raise ValueError(
                f"inverse_transform got {Y.shape[0]} instances, stats hold "
                f"{self.stats_.mean.shape[0]}"
            )
        return denormalize_all(Y, self.stats_)


class TrendSeasonalDecomposer(TransformerMixin, BaseEstimator):
    """Moving-average decomposition as a stateless transformer.

    Output stacks trend then seasonal along the channel axis:
    [n, L, 2] -> [n, L, 4] with columns (trend_map, trend_sbp,
    seasonal_map, seasonal_sbp); the first two plus the last two
    reconstruct the input.
    """

    def __init__(self, window: int = 25):
        self.window = window

    def fit(self, X, y=None):
        check_series_array(X)
        return self

    def transform(self, X):
        X = check_series_array(X)
        parts = decompose(X, self.window)
        return np.concatenate([parts.trend, parts.seasonal], axis=-1)


class IOHForecaster(BaseEstimator):
    """Trainable MAP/SBP forecaster with event-oriented evaluation.

    fit(X, y) expects contexts X of shape [n, context_len, 2] and target
    blocks y of shape [n, target_len, 2] that start ``skip_len`` samples
    after the context ends. predict(X) returns forecasts for the same
    target segment. All constructor arguments are plain hyperparameters,
    so get_params/set_params/clone behave as sklearn expects.
    """

    def __init__(self, context_len: int = 300, skip_len: int = 40,
                 target_len: int = 100, patch_len: int = 10,
                 d_model: int = 32, n_layers: int = 2, n_heads: int = 4,
                 d_ff: int | None = None, decomp_window: int = 25,
                 dropout: float = 0.0, use_norm: bool = True,
                 use_decomp: bool = True, learning_rate: float = 1e-3,
                 batch_size: int = 32, max_epochs: int = 50,
                 patience: int = 5, clip_norm: float = 1.0, seed: int = 0):
        self.context_len = context_len
        self.skip_len = skip_len
        self.target_len = target_len
        self.patch_len = patch_len
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.decomp_window = decomp_window
        self.dropout = dropout
        self.use_norm = use_norm
        self.use_decomp = use_decomp
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.clip_norm = clip_norm
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            context_len=self.context_len,
            horizon=self.skip_len + self.target_len,
            patch_len=self.patch_len,
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            d_ff=self.d_ff,
            decomp_window=self.decomp_window,
            dropout=self.dropout,
            use_norm=self.use_norm,
            use_decomp=self.use_decomp,
            seed=self.seed,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            learning_rate=self.learning_rate,
            patience=self.patience,
            clip_norm=self.clip_norm,
            seed=self.seed,
        )

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("IOHForecaster is not fitted yet")

    def fit(self, X, y, X_val=None, y_val=None):
        """Train on (contexts, targets); optional explicit validation split.

        Without a validation split the last 10% of instances (at least
        one) is held out for early stopping.
        """
        X = check_series_array(X, name="X")
        y = check_series_array(y, name="y")
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y disagree on instance count")
        if X.shape[1] != self.context_len or y.shape[1] != self.target_len:
            raise ValueError(
                f"expected X [n, {self.context_len}, 2] and "
                f"y [n, {self.target_len}, 2], got {X.shape} and {y.shape}"
            )
        config = self._model_config()
        config.validate()
        if X_val is None:
            n_val = max(1, X.shape[0] // 10)
            if X.shape[0] <= n_val:
                raise ValueError("not enough instances to hold out validation")
            X, X_val = X[:-n_val], X[-n_val:]
            y, y_val = y[:-n_val], y[-n_val:]
        else:
            X_val = check_series_array(X_val, name="X_val")
            y_val = check_series_array(y_val, name="y_val")
        train_instances = _instances_from_arrays(X, y, self.skip_len)
        val_instances = _instances_from_arrays(X_val, y_val, self.skip_len)
        params = init_params(config)
        self.params_, self.train_log_ = train(
            params, config, train_instances, val_instances,
            self._train_config(),
        )
        self.config_ = config
        return self

    def predict(self, X) -> np.ndarray:
        """Forecast the target segment for each context; [n, target_len, 2]."""
        self._check_fitted()
        X = check_series_array(X)
        out = np.empty((X.shape[0], self.target_len, 2))
        for i in range(X.shape[0]):
            res = autoregressive_forecast(X[i], self.params_, self.config_)
            out[i, :, 0] = res.pred_map[self.skip_len:]
            out[i, :, 1] = res.pred_sbp[self.skip_len:]
        return out

    def forecast(self, context) -> ForecastResult:
        """Full-horizon forecast (gap included) for one context window."""
        self._check_fitted()
        return autoregressive_forecast(np.asarray(context, dtype=np.float64),
                                       self.params_, self.config_)

    def score(self, X, y) -> float:
        """Negative normalized rollout MSE (higher is better)."""
        self._check_fitted()
        X = check_series_array(X)
        y = check_series_array(y, name="y")
        instances = _instances_from_arrays(X, y, self.skip_len)
        return -dataset_loss(self.params_, self.config_, instances)

    def evaluate(self, instances: list[WindowInstance], t: int,
                 threshold: float = 65.0):
        """MetricsReport over labeled window instances."""
        self._check_fitted()
        return evaluate_model(self.params_, self.config_, instances, t,
                              threshold)
