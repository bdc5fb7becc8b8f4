from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from pydantic import BaseModel, confloat, conint, validator

from ..carbon.model import CarbonBreakdown, CarbonTimeline, EnergyProfile, PhaseEnergy

DEFAULT_ACTION_SET_S = [1.0, 5.0, 10.0, 30.0, 60.0]

OUTCOME_COLUMNS = [
    "ts_ms",
    "function_id",
    "pod_id",
    "was_cold",
    "e2e_ms",
    "idle_s",
    "exec_j",
    "idle_j",
    "cold_j",
    "exec_g",
    "idle_g",
    "cold_g",
    "action_s",
    "residual_idle_s",
]


class Warmth(Enum):
    warm = "warm"
    cold = "cold"


class SimConfig(BaseModel):
    action_set_s: list[confloat(gt=0)] = DEFAULT_ACTION_SET_S
    network_const_ms: confloat(ge=0) = 0.0
    lambda_carbon: confloat(ge=0, le=1) = 0.5
    profile: EnergyProfile
    timeline: CarbonTimeline
    window_w: conint(ge=1) = 32
    seed: int = 0

    # Reuse probability assumed for a pod with no history
    prior_p: confloat(ge=0, le=1) = 0.5

    # Unit-balancing scales for the weighted cost, inferred when unset
    sigma_l: Optional[confloat(gt=0)] = None
    sigma_c: Optional[confloat(gt=0)] = None

    # Trace time 0 maps to this timeline instant, defaults to the first sample
    timeline_offset_ms: Optional[int] = None

    # Cold-start latency delays completion and with it the keep-alive expiry
    cold_delays_expiry: bool = True
    # Cut idle/exec/cold spans at carbon sample boundaries
    split_spans: bool = False

    class Config:
        copy_on_model_validation = "none"

    @validator("action_set_s")
    def check_action_set(cls, actions: list[float]) -> list[float]:
        if not actions:
            raise ValueError("action set must not be empty")
        for prev, curr in zip(actions, actions[1:]):
            if curr <= prev:
                raise ValueError(f"action set must be strictly increasing, got {actions}")
        return [float(a) for a in actions]

    @property
    def offset_ms(self) -> int:
        return self.timeline.first_ms if self.timeline_offset_ms is None else self.timeline_offset_ms

    @property
    def has_scales(self) -> bool:
        return self.sigma_l is not None and self.sigma_c is not None

    def with_lambda(self, lambda_carbon: float) -> "SimConfig":
        return self.copy(update={"lambda_carbon": lambda_carbon})


@dataclass
class PodRuntimeState:
    pod_id: str
    function_id: str
    cpu_cores: float
    mem_mb: float
    window_w: int
    warm_until_ms: Optional[float] = None  # None: unseen or reclaimed
    last_decision_s: Optional[float] = None
    last_completion_ms: Optional[float] = None
    last_outcome: Optional[int] = None
    reuse_history: deque = field(init=False)

    def __post_init__(self):
        self.reuse_history = deque(maxlen=self.window_w)


@dataclass(frozen=True)
class Resolution:
    """Realized outcome of a keep-alive decision

    Emitted when the pod's next arrival shows whether it was still warm, or at
    the end of the trace (`terminal`) when the full keep-alive is charged.
    """

    pod_id: str
    action_s: float
    was_cold: bool
    idle_s: float
    idle_g: float
    cold_ms: float
    terminal: bool = False


@dataclass(frozen=True)
class StepOutcome:
    ts_ms: int
    function_id: str
    pod_id: str
    was_cold: bool
    first_seen: bool
    e2e_ms: float
    idle_s: float
    residual_idle_s: float
    energy: PhaseEnergy
    carbon: CarbonBreakdown
    action_s: float
    ci: float
    cold_ms: float

    def row(self) -> tuple:
        return (
            self.ts_ms,
            self.function_id,
            self.pod_id,
            self.was_cold,
            self.e2e_ms,
            self.idle_s,
            self.energy.exec_j,
            self.energy.idle_j,
            self.energy.cold_j,
            self.carbon.exec_g,
            self.carbon.idle_g,
            self.carbon.cold_g,
            self.action_s,
            self.residual_idle_s,
        )
