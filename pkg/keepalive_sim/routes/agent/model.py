from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from pydantic import BaseModel, confloat, conint, validator

from .network import QNetwork

MODEL_FORMAT_VERSION = 1


class RewardMode(Enum):
    realized = "realized"
    expected = "expected"


class TrainConfig(BaseModel):
    capacity: conint(ge=1) = 10_000
    batch: conint(ge=1) = 64
    lr: confloat(gt=0) = 0.001
    gamma: confloat(gt=0, le=1) = 0.99
    eps_start: confloat(ge=0, le=1) = 1.0
    eps_decay: confloat(ge=0, le=1) = 0.95
    eps_min: confloat(ge=0, le=1) = 0.05
    target_sync_interval: conint(ge=1) = 500
    episodes: conint(ge=1) = 300
    # Unset: 0 on its own, derived from the run seed inside an experiment
    seed: Optional[int] = None
    hidden: list[conint(ge=1)] = [64, 64]
    # lambda_carbon is drawn from this set once per episode
    lambda_grid: list[confloat(ge=0, le=1)] = [0.1, 0.3, 0.5, 0.7, 0.9]
    reward_mode: RewardMode = RewardMode.realized

    class Config:
        extra = "forbid"

    @validator("lambda_grid")
    def check_grid(cls, grid: list[float]) -> list[float]:
        if not grid:
            raise ValueError("lambda_grid must not be empty")
        return grid

    def epsilon(self, episode: int) -> float:
        return max(self.eps_min, self.eps_start * self.eps_decay**episode)


class NormStats(BaseModel):
    mem_mean: float
    mem_std: confloat(gt=0)
    cpu_mean: float
    cpu_std: confloat(gt=0)
    ci_mean: float
    ci_std: confloat(gt=0)
    log_cold_mean: float
    log_cold_std: confloat(gt=0)


class TrainingLogRow(BaseModel):
    episode: int
    epsilon: float
    lambda_carbon: float
    transitions: int
    updates: int
    mean_loss: float
    train_reward: float
    validation_reward: float
    cold_starts: int
    keep_alive_carbon_g: float


class ModelFile(BaseModel):
    """On-disk model container (JSON)

    weights[i] is a row-major (fan_in x fan_out) matrix, biases[i] its
    fan_out vector.
    """

    format_version: int
    layer_sizes: list[int]
    weights: list[list[list[float]]]
    biases: list[list[float]]
    norm: NormStats
    action_set_s: list[float]
    sigma_l: float
    sigma_c: float


@dataclass
class TrainedModel:
    net: QNetwork
    stats: NormStats
    action_set_s: list[float]
    sigma_l: float
    sigma_c: float
    log: list[TrainingLogRow] = field(default_factory=list)
    best_episode: int = -1
