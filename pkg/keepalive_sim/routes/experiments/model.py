from enum import Enum
from typing import Optional

from pydantic import BaseModel, Extra, confloat, conint, validator

from ..agent.model import TrainConfig
from ..carbon.model import EnergyProfile
from ..engine.model import DEFAULT_ACTION_SET_S
from ..metrics.model import ComparisonTable, GapRow, SimReport
from ..policies.model import PolicyName
from ..trace.model import ColdStartEntry, Invocation, SyntheticSpec


class Partition(Enum):
    train = "train"
    validation = "validation"
    test = "test"
    all = "all"


class ColdStatistic(Enum):
    mean = "mean"
    median = "median"


class Section(BaseModel):
    class Config:
        extra = Extra.forbid
        validate_assignment = True


class TraceSection(Section):
    path: Optional[str]
    cold_log: Optional[str]
    synthetic: Optional[SyntheticSpec]
    split_ratios: tuple[confloat(gt=0), confloat(gt=0), confloat(gt=0)] = (0.8, 0.1, 0.1)
    # Derived from the root seed when unset
    split_seed: Optional[int]
    evaluate_on: Partition = Partition.test
    # Evaluate only on invocations whose cold latency reaches this quantile
    long_tail_quantile: Optional[confloat(ge=0, le=1)]
    cold_statistic: ColdStatistic = ColdStatistic.mean
    default_cold_ms: Optional[confloat(gt=0)]


class CarbonSection(Section):
    timeline: Optional[str]
    constant_ci: confloat(ge=0) = 400.0
    # Hourly values repeated over the trace, used when no timeline file is given
    alternating: Optional[list[confloat(ge=0)]]
    profile: str = "m5-xeon"
    profiles_file: Optional[str]
    split_spans: bool = False
    timeline_offset_ms: Optional[int]


class SimSection(Section):
    action_set_s: list[confloat(gt=0)] = DEFAULT_ACTION_SET_S
    network_const_ms: confloat(ge=0) = 0.0
    window_w: conint(ge=1) = 32
    lambda_carbon: confloat(ge=0, le=1) = 0.5
    seed: int = 0
    prior_p: confloat(ge=0, le=1) = 0.5
    sigma_l: Optional[confloat(gt=0)]
    sigma_c: Optional[confloat(gt=0)]
    cold_delays_expiry: bool = True


class PolicySection(Section):
    name: PolicyName = PolicyName.fixed
    k: confloat(gt=0) = 60.0
    swarm: conint(ge=2) = 16
    iters: conint(ge=1) = 50
    model: Optional[str]


class OutputSection(Section):
    directory: Optional[str]
    # Log level for CLI runs, unless --log-level is given; LOG_LEVEL applies when unset
    verbosity: Optional[str]
    write_outcomes: bool = True

    @validator("verbosity")
    def check_verbosity(cls, value: Optional[str]) -> Optional[str]:
        if value is None:
            return None
        if value.upper() not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"unknown verbosity '{value}'")
        return value.upper()


class RunConfig(Section):
    trace: TraceSection = TraceSection()
    carbon: CarbonSection = CarbonSection()
    sim: SimSection = SimSection()
    policy: PolicySection = PolicySection()
    train: TrainConfig = TrainConfig()
    output: OutputSection = OutputSection()


class SimulationRequest(BaseModel):
    invocations: Optional[list[Invocation]]
    cold_logs: Optional[list[ColdStartEntry]]
    trace: TraceSection = TraceSection(evaluate_on=Partition.all)
    carbon: CarbonSection = CarbonSection()
    sim: SimSection = SimSection()
    policy: PolicySection = PolicySection()

    class Config:
        extra = Extra.forbid


class ComparisonRequest(SimulationRequest):
    policies: list[PolicyName] = [
        PolicyName.fixed,
        PolicyName.latency_min,
        PolicyName.carbon_min,
        PolicyName.pso,
        PolicyName.oracle,
    ]


class ComparisonResult(BaseModel):
    table: ComparisonTable
    reports: dict[str, SimReport]
    # None when the oracle was not part of the comparison
    oracle_dominates: Optional[bool]


class OracleGapResult(BaseModel):
    rl: SimReport
    oracle: SimReport
    rows: list[GapRow]


class ProfileList(BaseModel):
    profiles: list[EnergyProfile]
