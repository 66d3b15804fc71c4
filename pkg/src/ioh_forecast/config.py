"""Run configuration: one JSON document that drives the whole pipeline.

Sections mirror the pipeline stages (cohort synthesis, windowing, model,
training); every field has a default, and cross-field constraints are
checked once at load time so no command starts work on an inconsistent
setup. The clinical-protocol preset pins the published evaluation
constants: 3 s sampling, 15-minute context, 2-minute gap, 65 mmHg
threshold sustained for 1 minute.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .network import ModelConfig
from .training import TrainConfig
from .vitals import CohortConfig


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


PROTOCOL_INTERVAL_S = 3.0
PROTOCOL_CONTEXT = 300
PROTOCOL_SKIP = 40
PROTOCOL_TARGETS = (100, 200, 300)
PROTOCOL_MIN_DURATION = 20
PROTOCOL_THRESHOLD = 65.0


@dataclass
class WindowingConfig:
    L: int = 300
    skip_len: int = 40
    target_len: int = 100
    t: int = 20
    theta_map: float = 65.0
    interval_s: float = 3.0
    stride: int | None = None  # None resolves to target_len
    max_gap: int = 5

    @property
    def resolved_stride(self) -> int:
        return self.stride if self.stride is not None else self.target_len

    def validate(self) -> None:
        if self.L < 2 or self.target_len < 1 or self.skip_len < 0:
            raise ConfigError("window lengths out of range")
        if self.t < 1:
            raise ConfigError("minimum event duration t must be >= 1")
        if self.t > self.target_len:
            raise ConfigError(
                f"t ({self.t}) cannot exceed target_len ({self.target_len})"
            )
        if self.interval_s <= 0:
            raise ConfigError("interval_s must be > 0")
        if self.resolved_stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.max_gap < 0:
            raise ConfigError("max_gap must be >= 0")


@dataclass
class ModelSection:
    patch_len: int = 10
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int | None = None
    decomp_window: int = 25
    dropout: float = 0.0
    seed: int = 0


@dataclass
class RunConfig:
    cohort: CohortConfig = field(default_factory=CohortConfig)
    windowing: WindowingConfig = field(default_factory=WindowingConfig)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainConfig = field(default_factory=TrainConfig)

    def model_config(self, use_norm: bool = True,
                     use_decomp: bool = True) -> ModelConfig:
        w, m = self.windowing, self.model
        return ModelConfig(
            context_len=w.L,
            horizon=w.skip_len + w.target_len,
            patch_len=m.patch_len,
            d_model=m.d_model,
            n_layers=m.n_layers,
            n_heads=m.n_heads,
            d_ff=m.d_ff,
            decomp_window=m.decomp_window,
            dropout=m.dropout,
            use_norm=use_norm,
            use_decomp=use_decomp,
            seed=m.seed,
        )

    def validate(self, paper_protocol: bool = False) -> None:
        try:
            self.cohort.validate()
            self.windowing.validate()
            self.training.validate()
            self.model_config().validate()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        w = self.windowing
        dur_lo = self.cohort.episode_duration_range_s[0]
        if self.cohort.episode_rate_per_hour > 0 and \
                dur_lo < w.t * w.interval_s:
            raise ConfigError(
                f"episode durations (min {dur_lo}s) shorter than the "
                f"labeled event duration {w.t * w.interval_s}s would inject "
                f"dips that never count as events"
            )
        if paper_protocol:
            if w.interval_s != PROTOCOL_INTERVAL_S:
                raise ConfigError("protocol preset requires 3 s sampling")
            if w.L != PROTOCOL_CONTEXT or w.skip_len != PROTOCOL_SKIP:
                raise ConfigError(
                    "protocol preset requires a 300-sample context and a "
                    "40-sample skip gap"
                )
            if w.target_len not in PROTOCOL_TARGETS:
                raise ConfigError(
                    f"protocol preset allows target_len in "
                    f"{PROTOCOL_TARGETS}, got {w.target_len}"
                )
            if w.t != PROTOCOL_MIN_DURATION or \
                    w.theta_map != PROTOCOL_THRESHOLD:
                raise ConfigError(
                    "protocol preset requires t=20 samples and a 65 mmHg "
                    "threshold"
                )
            if w.t * w.interval_s < 60.0:
                raise ConfigError(
                    "protocol preset requires events sustained >= 60 s"
                )

    def apply_paper_protocol(self) -> None:
        """Pin the windowing constants of the published protocol."""
        w = self.windowing
        w.interval_s = PROTOCOL_INTERVAL_S
        w.L = PROTOCOL_CONTEXT
        w.skip_len = PROTOCOL_SKIP
        w.t = PROTOCOL_MIN_DURATION
        w.theta_map = PROTOCOL_THRESHOLD
        if w.target_len not in PROTOCOL_TARGETS:
            w.target_len = PROTOCOL_TARGETS[0]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build_section(cls, data: dict, section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(
            f"unknown keys in '{section}' section: {sorted(unknown)}"
        )
    coerced = dict(data)
    for f in dataclasses.fields(cls):
        if f.name in coerced and isinstance(coerced[f.name], list):
            coerced[f.name] = tuple(coerced[f.name])
    try:
        return cls(**coerced)
    except TypeError as exc:
        raise ConfigError(f"bad '{section}' section: {exc}") from None


def load_run_config(path=None) -> RunConfig:
    """Load a run configuration; None or a missing section means defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    unknown = set(doc) - {"cohort", "windowing", "model", "training"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections: {sorted(unknown)}")
    return RunConfig(
        cohort=_build_section(CohortConfig, doc.get("cohort", {}), "cohort"),
        windowing=_build_section(WindowingConfig, doc.get("windowing", {}),
                                 "windowing"),
        model=_build_section(ModelSection, doc.get("model", {}), "model"),
        training=_build_section(TrainConfig, doc.get("training", {}),
                                "training"),
    )
