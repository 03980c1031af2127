"""
Experiment configuration.

An experiment is one JSON document with `data`, `train` and `prune` sections
plus an `output_dir`. Environment variables prefixed GFC_ override runtime
settings such as the worker count.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from flowdag.errors import ConfigError
from flowdag.graph_state import SamplingCase
from flowdag.rewards import RewardConfig
from flowdag.trainer import TrainConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class NoiseSection(_Section):
    kind: Literal["gaussian", "gumbel"] = "gaussian"
    scale: float = Field(default=1.0, gt=0)


class DataSection(_Section):
    d: int = Field(ge=2)
    n: int = Field(default=1000, ge=1)
    graph_type: Literal["er", "sf"] = "er"
    beta: float = Field(default=2.0, ge=1)
    noise: NoiseSection = NoiseSection()
    seed: int = 0
    standardize: bool = False

    @model_validator(mode="after")
    def _check_density(self) -> "DataSection":
        if self.graph_type == "er" and self.beta * self.d > self.d * (self.d - 1) / 2:
            raise ValueError(f"beta={self.beta} asks for more edges than a DAG on {self.d} nodes holds")
        if self.graph_type == "sf" and (self.beta >= self.d or self.beta != int(self.beta)):
            raise ValueError(f"scale-free beta must be an integer below d, got {self.beta}")
        return self


class RewardSection(_Section):
    kind: Literal["varsortability", "bic"] = "varsortability"
    c: float = Field(default=100.0, gt=0)
    tau: float | None = Field(default=None, gt=0)


class TrainSection(_Section):
    batch: int = Field(default=64, ge=1)
    epochs: int = Field(default=5000, ge=0)
    lr: float = Field(default=1e-4, gt=0)
    case: Literal[1, 2, 3] = 2
    reward: RewardSection = RewardSection()
    loss_space: Literal["log", "raw"] = "log"
    epsilon: float = Field(default=1e-8, ge=0)
    hidden_width: int = Field(default=256, ge=1)
    features: Literal["adjacency", "adjacency_closure"] = "adjacency"
    uniform_epochs: int = Field(default=500, ge=0)
    exploration: float = Field(default=0.05, ge=0, le=1)
    seed: int = 0
    checkpoint_every: int = Field(default=0, ge=0)
    log_every: int = Field(default=100, ge=1)
    check_invariants: bool = True


class PruneSection(_Section):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    method: Literal["threshold", "lasso"] = "threshold"
    omega: float = Field(default=0.3, ge=0)
    lam: float = Field(default=0.1, ge=0, alias="lambda")

    @property
    def param(self) -> float:
        return self.omega if self.method == "threshold" else self.lam


class ExperimentConfig(_Section):
    data: DataSection
    train: TrainSection = TrainSection()
    prune: PruneSection = PruneSection()
    output_dir: str = "runs/default"


class RuntimeSettings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="GFC_")

    workers: int = Field(default=1, ge=1)
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"
    runs_dir: str = "runs"

    def resolve_workers(self, requested: int | None = None) -> int:
        """Worker count for a run: GFC_WORKERS when set, else `requested`, else 1."""
        if "workers" in self.model_fields_set:
            return self.workers
        return requested if requested else 1


def parse_experiment_config(payload: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(f"Invalid experiment configuration:\n{e}") from e


def load_experiment_config(path: Path | str) -> ExperimentConfig:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"Config file '{path}' not found.")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file '{path}' is not valid JSON: {e}") from e
    return parse_experiment_config(payload)


def to_train_config(cfg: ExperimentConfig, workers: int = 1) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        d=cfg.data.d,
        batch_size=t.batch,
        epochs=t.epochs,
        lr=t.lr,
        case=SamplingCase(t.case),
        reward=RewardConfig(kind=t.reward.kind, scale=t.reward.c, temperature=t.reward.tau),
        seed=t.seed,
        loss_space=t.loss_space,
        epsilon=t.epsilon,
        hidden_width=t.hidden_width,
        features=t.features,
        uniform_epochs=t.uniform_epochs,
        exploration=t.exploration,
        prune_method=cfg.prune.method,
        prune_param=cfg.prune.param,
        workers=workers,
        checkpoint_every=t.checkpoint_every,
        log_every=t.log_every,
        check_invariants=t.check_invariants,
    )
