from typing import Literal

from pydantic import Field

from pdvox.models.common import StrictModel
from pdvox.models.config import ModelConfig, TrainConfig


class TrialSpec(StrictModel):
    index: int = Field(ge=0)
    seed: int
    model: ModelConfig
    train: TrainConfig
    name: str | None = None


class TrialMetrics(StrictModel):
    final_train_f2: float = Field(ge=0, le=1)
    best_dev_f2: float = Field(ge=0, le=1)
    epochs_run: int = Field(ge=0)


class TrialResult(StrictModel):
    spec: TrialSpec
    status: Literal["ok", "failed"] = "ok"
    metrics: TrialMetrics | None = None
    error: str | None = None
    wall_time: float = Field(default=0.0, ge=0)
