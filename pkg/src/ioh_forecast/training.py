"""Training loop: rollout MSE minimized with Adam, validation-based
early stopping, and an overfit smoke test for gradient flow.

Training runs the same free-running autoregressive rollout used at
inference and backpropagates through the entire generated chain. The loss
covers only the trailing target segment (the lead-time gap is generated
but unsupervised) on the normalized scale, both channels averaged.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import GradTape, Tensor, backward, mul, sub, tmean
from .network import ModelConfig, ModelParams, init_params, rollout
from .optim import Adam, clip_global_norm
from .preprocess import normalize
from .vitals import CohortConfig, synth_cohort
from .windows import WindowInstance, make_windows

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; message names the offending batch."""


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 50
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 5
    clip_norm: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    stopped_early: bool = False

    def write_jsonl(self, path) -> None:
        import json

        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.epochs:
                fh.write(json.dumps(asdict(rec)) + "\n")
            fh.write(json.dumps({
                "event": "finished",
                "best_epoch": self.best_epoch,
                "best_val_loss": self.best_val_loss,
                "stopped_early": self.stopped_early,
            }) + "\n")


def mse_loss(pred, actual):
    """Mean squared error; differentiable when given tensors.

    Tensor inputs return a scalar Tensor on the active tape; plain arrays
    return a float.
    """
    if isinstance(pred, Tensor) or isinstance(actual, Tensor):
        p = pred if isinstance(pred, Tensor) else Tensor(np.asarray(pred))
        a = actual if isinstance(actual, Tensor) else Tensor(
            np.asarray(actual, dtype=p.dtype))
        if p.shape != a.shape:
            raise ValueError(f"mse_loss shapes differ: {p.shape} vs {a.shape}")
        d = sub(a, p)
        return tmean(mul(d, d))
    p = np.asarray(pred, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape:
        raise ValueError(f"mse_loss shapes differ: {p.shape} vs {a.shape}")
    if p.size == 0:
        raise ValueError("mse_loss requires at least one element")
    return float(np.mean((a - p) ** 2))


def _instances_arrays(instances: list[WindowInstance]):
    ctx = np.stack([w.context for w in instances])
    tgt = np.stack(
        [np.stack([w.target_map, w.target_sbp], axis=1) for w in instances]
    )
    return ctx, tgt


def prepare_batch(instances: list[WindowInstance], config: ModelConfig,
                  dtype=np.float32):
    """Stack instances into model-ready arrays.

    Returns (normalized contexts [B, L, 2], normalized targets
    [B, tau, 2]); each instance is standardized by its own context
    statistics. With use_norm disabled both come back on the raw scale.
    """
    ctx, tgt = _instances_arrays(instances)
    if config.use_norm:
        ctx_n, stats = normalize(ctx)
        tgt_n = (tgt - stats.mean[:, None, :]) / stats.std[:, None, :]
    else:
        ctx_n, tgt_n = ctx, tgt
    return ctx_n.astype(dtype), tgt_n.astype(dtype)


def _check_protocol(instances: list[WindowInstance], config: ModelConfig) -> int:
    skip = instances[0].skip_len
    tau = len(instances[0].target_map)
    for w in instances:
        if w.skip_len != skip or len(w.target_map) != tau:
            raise ValueError("instances disagree on skip/target lengths")
    if skip + tau != config.horizon:
        raise ValueError(
            f"model horizon {config.horizon} does not equal skip ({skip}) "
            f"plus target ({tau})"
        )
    return skip


def dataset_loss(params: ModelParams, config: ModelConfig,
                 instances: list[WindowInstance], batch_size: int = 64) -> float:
    """Normalized-scale rollout MSE over a split, pooled across instances."""
    skip = _check_protocol(instances, config)
    total_sq = 0.0
    total_n = 0
    for i in range(0, len(instances), batch_size):
        batch = instances[i : i + batch_size]
        ctx_n, tgt_n = prepare_batch(batch, config, dtype=params.dtype())
        pred = rollout(Tensor(ctx_n), params, config).data
        diff = pred[:, skip:, :].astype(np.float64) - tgt_n.astype(np.float64)
        total_sq += float(np.sum(diff * diff))
        total_n += diff.size
    return total_sq / total_n


def train(params: ModelParams, config: ModelConfig,
          train_instances: list[WindowInstance],
          val_instances: list[WindowInstance],
          train_config: TrainConfig) -> tuple[ModelParams, TrainLog]:
    """Optimize params in place; returns (best-validation params, log).

    Per batch: full rollout over the gap-plus-target horizon, MSE on the
    normalized target segment, backward through the whole chain,
    global-norm clipping, one Adam step. Stops once validation loss has
    not improved for ``patience`` consecutive epochs. Deterministic for a
    fixed seed: shuffling is the only randomness.
    """
    train_config.validate()
    config.validate()
    if not train_instances or not val_instances:
        raise ValueError("train and validation splits must be non-empty")
    skip = _check_protocol(train_instances, config)
    _check_protocol(val_instances, config)

    rng = np.random.default_rng(train_config.seed)
    dropout_rng = np.random.default_rng([train_config.seed, 1])
    tensors = params.tensors()
    opt = Adam(tensors, lr=train_config.learning_rate,
               beta1=train_config.beta1, beta2=train_config.beta2,
               eps=train_config.adam_eps)

    log = TrainLog()
    best_params = params.copy()
    since_best = 0
    n = len(train_instances)
    for epoch in range(1, train_config.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        epoch_sq = 0.0
        epoch_n = 0
        for b, lo in enumerate(range(0, n, train_config.batch_size)):
            batch = [train_instances[j] for j in order[lo : lo + train_config.batch_size]]
            ctx_n, tgt_n = prepare_batch(batch, config)
            with GradTape() as tape:
                window = Tensor(ctx_n)
                pred = rollout(window, params, config,
                               rng=dropout_rng, train=True)
                loss = mse_loss(pred[:, skip:, :], Tensor(tgt_n))
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise TrainingDivergedError(
                    f"non-finite loss {loss_val} in epoch {epoch}, "
                    f"batch {b} ({len(batch)} instances)"
                )
            epoch_sq += loss_val * tgt_n.size
            epoch_n += tgt_n.size
            opt.zero_grad()
            backward(loss, tape)
            clip_global_norm(tensors, train_config.clip_norm)
            opt.step()

        val_loss = dataset_loss(params, config, val_instances,
                                batch_size=max(train_config.batch_size, 64))
        record = EpochRecord(
            epoch=epoch,
            train_loss=epoch_sq / epoch_n,
            val_loss=val_loss,
            seconds=time.perf_counter() - t0,
        )
        log.epochs.append(record)
        logger.info("epoch %d: train %.6f val %.6f (%.1fs)",
                    epoch, record.train_loss, record.val_loss, record.seconds)
        if val_loss < log.best_val_loss:
            log.best_val_loss = val_loss
            log.best_epoch = epoch
            best_params = params.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= train_config.patience:
                log.stopped_early = True
                break
    return best_params, log


# ---------------------------------------------------------------------------
# Overfit smoke test
# ---------------------------------------------------------------------------


@dataclass
class OverfitReport:
    passed: bool
    steps_run: int
    initial_mse: float
    final_mse: float

    @property
    def loss_ratio(self) -> float:
        if self.initial_mse == 0:
            return 0.0
        return self.final_mse / self.initial_mse


def tiny_config(seed: int = 0) -> ModelConfig:
    """Smallest config that still exercises every architecture piece."""
    return ModelConfig(
        context_len=20, horizon=10, patch_len=5, d_model=8, n_layers=1,
        n_heads=2, d_ff=32, decomp_window=5, seed=seed,
    )


def _sanity_instances(n_instances: int, L: int, tau: int) -> list[WindowInstance]:
    cohort = CohortConfig(
        n_patients=1,
        duration_s=3.0 * (L + tau + (n_instances - 1) * tau + 8),
        interval_s=3.0,
        episode_rate_per_hour=0.0,
        drift_amplitude=3.0,
        periodic_amplitudes=(6.0, 2.0),
        periodic_periods_s=(120.0, 45.0),
        noise_std=0.2,
        seed=13,
    )
    series = synth_cohort(cohort)[0]
    instances = make_windows(series, L=L, skip_len=0, tau=tau, stride=tau,
                             theta_map=65.0, t=5)
    return instances[:n_instances]


def overfit_sanity(n_instances: int = 8, config: ModelConfig | None = None,
                   max_steps: int = 2000, learning_rate: float = 5e-3,
                   target_mse: float = 0.01) -> OverfitReport:
    """Train on a handful of instances until they are memorized.

    Full-batch Adam on ``n_instances`` synthetic windows with no early
    stopping; passes when the normalized train MSE drops below
    ``target_mse`` within ``max_steps`` steps. A failure here means
    gradients do not flow or capacity is broken, not that tuning is off.
    """
    config = config or tiny_config()
    config.validate()
    instances = _sanity_instances(n_instances, config.context_len, config.horizon)
    if len(instances) < n_instances:
        raise ValueError("sanity cohort produced too few instances")
    skip = _check_protocol(instances, config)
    params = init_params(config)
    tensors = params.tensors()
    opt = Adam(tensors, lr=learning_rate)
    ctx_n, tgt_n = prepare_batch(instances, config)

    initial = None
    final = None
    steps = 0
    for step in range(max_steps + 1):
        with GradTape() as tape:
            pred = rollout(Tensor(ctx_n), params, config)
            loss = mse_loss(pred[:, skip:, :], Tensor(tgt_n))
        loss_val = loss.item()
        if initial is None:
            initial = loss_val
        final = loss_val
        steps = step
        if loss_val < target_mse:
            break
        if step == max_steps:
            break
        opt.zero_grad()
        backward(loss, tape)
        opt.step()
    return OverfitReport(
        passed=final < target_mse,
        steps_run=steps,
        initial_mse=initial,
        final_mse=final,
    )
