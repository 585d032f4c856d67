"""Declarative experiment configuration (JSON), validated before any work starts."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .data import PRESETS, DatasetSpec
from .engine import DEFAULT_TAU_SAT, StagePlan, single_teacher_schedule
from .errors import ConfigError
from .experiments import BENCHMARK_ALPHA0S, BENCHMARK_MODEL


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetSection(_Section):
    """Either a preset (plus overrides) to generate, or ``path`` to an existing dataset."""

    path: Optional[str] = None
    preset: Literal["standard", "audioset-like", "noisy-probe", "clean"] = "standard"
    n_classes: Optional[int] = Field(None, ge=1)
    n_train: Optional[int] = Field(None, ge=1)
    n_val: Optional[int] = Field(None, ge=1)
    n_test: Optional[int] = Field(None, ge=1)
    frames: Optional[int] = Field(None, ge=1)
    feature_dim: Optional[int] = Field(None, ge=1)
    event_length: Optional[int] = Field(None, ge=1)
    event_amplitude: Optional[float] = Field(None, ge=0)
    noise_sigma: Optional[float] = Field(None, ge=0)
    overlap: Optional[float] = Field(None, ge=0, le=1)
    priors: Optional[Union[float, list[float]]] = None
    label_mode: Optional[Literal["multi", "single"]] = None
    delta: Optional[Union[float, list[float]]] = None
    noise_seed: Optional[int] = None

    def spec(self, seed: int) -> DatasetSpec:
        overrides = self.model_dump(exclude={"path", "preset"}, exclude_none=True)
        try:
            return DatasetSpec.preset(self.preset, seed=seed, **overrides)
        except ValueError as err:
            raise ConfigError(f"dataset: {err}") from err


class ModelSection(_Section):
    channels: list[int] = Field(default_factory=lambda: [16, 32])
    pools: list[int] = Field(default_factory=lambda: list(BENCHMARK_MODEL["pools"]))
    segment_width: int = Field(3, ge=1)
    embed_dim: int = Field(64, ge=1)
    hidden_dims: list[int] = Field(default_factory=lambda: [64])
    pooling: Literal["attention", "mean", "max"] = "attention"
    padding_mode: Literal["edge", "zeros"] = "edge"
    epochs: int = Field(BENCHMARK_MODEL["epochs"], ge=1)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(BENCHMARK_MODEL["learning_rate"], gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    attention_warmup: float = Field(0.2, ge=0, le=1)
    class_weighting: bool = True
    positive_only_weights: bool = False

    @model_validator(mode="after")
    def _geometry(self):
        if len(self.channels) != len(self.pools):
            raise ValueError("model.channels and model.pools must have the same length")
        if any(v < 1 for v in self.channels + self.pools + self.hidden_dims):
            raise ValueError("model channel, pool and hidden sizes must be positive")
        return self

    def estimator_params(self) -> dict:
        d = self.model_dump()
        for k in ("channels", "pools", "hidden_dims"):
            d[k] = tuple(d[k])
        return d


class StageSection(_Section):
    teachers: list[int] = Field(default_factory=list)
    alphas: list[float] = Field(default_factory=lambda: [1.0])
    epochs: Optional[int] = Field(None, ge=1)


class MetricsSection(_Section):
    threshold: float = Field(0.5, ge=0, le=1)
    tau_sat: float = Field(DEFAULT_TAU_SAT, ge=0)
    stop_rule: bool = False
    reference: Literal["observed", "true"] = "observed"


class ExperimentConfig(_Section):
    """Top-level document. ``schedule`` lists stage plans in order; when it is
    empty, ``alpha0s`` builds a single-teacher schedule."""

    dataset: DatasetSection = Field(default_factory=DatasetSection)
    model: ModelSection = Field(default_factory=ModelSection)
    schedule: list[StageSection] = Field(default_factory=list)
    alpha0s: list[float] = Field(default_factory=lambda: list(BENCHMARK_ALPHA0S))
    alpha_grid: list[float] = Field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    metrics: MetricsSection = Field(default_factory=MetricsSection)
    output: str = "runs/default"
    seed: int = 0

    @field_validator("alpha0s", "alpha_grid")
    @classmethod
    def _unit_interval(cls, v):
        if not v:
            raise ValueError("must not be empty")
        if any(not 0.0 <= a <= 1.0 for a in v):
            raise ValueError(f"values must lie in [0, 1], got {v}")
        return v

    def stage_plans(self) -> list:
        """Build and validate the StagePlan list, naming the failing stage."""
        try:
            if not self.schedule:
                return single_teacher_schedule(self.alpha0s)
        except ValueError as err:
            raise ConfigError(f"alpha0s: {err}") from err
        plans = []
        for t, s in enumerate(self.schedule):
            try:
                plans.append(StagePlan(t, s.teachers, s.alphas, s.epochs, None))
            except ValueError as err:
                raise ConfigError(f"schedule stage {t}: {err}") from err
        return plans


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read and validate a JSON config. ``overrides`` replace top-level keys."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as err:
        raise ConfigError(str(err)) from err


def config_schema() -> dict:
    return ExperimentConfig.model_json_schema()


__all__ = ["DatasetSection", "ExperimentConfig", "MetricsSection", "ModelSection", "PRESETS", "StageSection",
           "config_schema", "load_config"]
