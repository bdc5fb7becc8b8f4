from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from ..carbon.model import EnergyProfile
from ..engine.model import Resolution, SimConfig
from ..trace.model import Invocation


class PolicyName(Enum):
    fixed = "fixed"
    latency_min = "latency_min"
    carbon_min = "carbon_min"
    weighted_greedy = "weighted_greedy"
    pso = "pso"
    oracle = "oracle"
    rl = "rl"


@dataclass(frozen=True)
class DecisionContext:
    """Engine view of one pod right after an execution completes"""

    pod_id: str
    function_id: str
    ts_ms: int
    p_k: np.ndarray
    cpu_cores: float
    mem_mb: float
    l_cold_ms: float
    ci_now: float
    lambda_carbon: float
    action_set_s: tuple[float, ...]
    profile: EnergyProfile
    sigma_l: float = 1.0
    sigma_c: float = 1.0

    # Oracle only: seconds until the pod's next arrival (inf: never) and its cold latency
    next_gap_s: Optional[float] = None
    next_cold_ms: Optional[float] = None


@dataclass(frozen=True)
class CostPair:
    c_cold: float
    c_carbon: float


class KeepAlivePolicy:
    """Decision interface driven by the engine

    `decide` picks the keep-alive for a context. `feedback` receives the
    realized outcome of an earlier decision. `reset` is called once per run,
    then `prepare` with the whole trace for policies that plan ahead.
    """

    name = "policy"
    requires_future = False

    def reset(self, cfg: SimConfig) -> None:
        pass

    def prepare(self, trace: Sequence[Invocation], cfg: SimConfig) -> None:
        pass

    def feedback(self, resolution: Resolution) -> None:
        pass

    def decide(self, ctx: DecisionContext) -> float:
        raise NotImplementedError

    def __call__(self, ctx: DecisionContext) -> float:
        return self.decide(ctx)


class FunctionPolicy(KeepAlivePolicy):
    def __init__(self, name: str, fn: Callable[[DecisionContext], float], requires_future: bool = False):
        self.name = name
        self.fn = fn
        self.requires_future = requires_future

    def decide(self, ctx: DecisionContext) -> float:
        return self.fn(ctx)


class PolicyInfo(BaseModel):
    name: PolicyName
    parameters: dict[str, str]
    description: str
