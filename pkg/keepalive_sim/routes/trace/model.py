from enum import Enum
from typing import Optional

from pydantic import BaseModel, PrivateAttr, confloat, conint, constr, root_validator, validator

TRACE_COLUMNS = [
    "ts_ms",
    "function_id",
    "pod_id",
    "cpu_cores",
    "mem_mb",
    "exec_ms",
    "runtime_tag",
    "trigger_tag",
]
COLD_LOG_COLUMNS = ["runtime_tag", "trigger_tag", "cold_ms"]


class Invocation(BaseModel):
    ts_ms: conint(ge=0)
    function_id: constr(min_length=1)
    pod_id: constr(min_length=1)
    cpu_cores: confloat(gt=0)
    mem_mb: confloat(gt=0)
    exec_ms: conint(ge=0)
    runtime_tag: constr(min_length=1)
    trigger_tag: constr(min_length=1)

    # Expected cold-start latency, set from the ColdStartTable
    cold_ms: Optional[confloat(gt=0)] = None

    class Config:
        frozen = True
        copy_on_model_validation = "none"

    @property
    def cold_key(self) -> tuple[str, str]:
        return self.runtime_tag, self.trigger_tag

    def row(self) -> tuple:
        return tuple(getattr(self, column) for column in TRACE_COLUMNS)


class ColdStartEntry(BaseModel):
    runtime_tag: str
    trigger_tag: str
    cold_ms: confloat(gt=0)


class ColdStartTable(BaseModel):
    entries: list[ColdStartEntry] = []
    fallback_ms: confloat(gt=0)

    _index: dict[tuple[str, str], float] = PrivateAttr(default_factory=dict)

    def __init__(self, **data):
        super().__init__(**data)
        self._index = {(e.runtime_tag, e.trigger_tag): e.cold_ms for e in self.entries}

    def lookup(self, runtime_tag: str, trigger_tag: str) -> float:
        return self._index.get((runtime_tag, trigger_tag), self.fallback_ms)

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self._index


class TraceSplit(BaseModel):
    train: list[Invocation]
    validation: list[Invocation]
    test: list[Invocation]
    split_seed: int

    def partition(self, name: str) -> list[Invocation]:
        match name:
            case "train":
                return self.train
            case "validation":
                return self.validation
            case "test":
                return self.test
            case "all":
                return sorted(self.train + self.validation + self.test, key=lambda i: i.ts_ms)
        raise ValueError(f"unknown partition '{name}'")


class ArrivalModel(Enum):
    poisson = "poisson"
    bimodal = "bimodal"
    deterministic = "deterministic"


Range = tuple[float, float]


class SyntheticSpec(BaseModel):
    n_functions: conint(ge=1) = 1
    n_pods_per_function: conint(ge=1) = 1
    duration_s: conint(gt=0)
    arrival_model: ArrivalModel = ArrivalModel.poisson

    # poisson
    rate_hz: confloat(gt=0) = 1.0
    # bimodal: `burst_fraction` of every period at burst rate, the rest at lull rate
    burst_rate_hz: confloat(gt=0) = 0.5
    lull_rate_hz: confloat(gt=0) = 0.01
    period_s: confloat(gt=0) = 600.0
    burst_fraction: confloat(gt=0, lt=1) = 0.5
    # deterministic
    interval_s: confloat(gt=0) = 10.0

    cold_latency_range_ms: Range = (100.0, 1000.0)
    cpu_range: Range = (0.5, 2.0)
    mem_range: Range = (128.0, 1024.0)
    exec_range_ms: Range = (50.0, 500.0)
    runtime_tags: list[constr(min_length=1)] = ["python", "custom"]
    trigger_tags: list[constr(min_length=1)] = ["http", "timer"]
    cold_log_samples: conint(ge=1) = 4
    # Unset: 0 on its own, derived from the run seed inside an experiment
    seed: Optional[int] = None

    class Config:
        extra = "forbid"
        use_enum_values = False

    @validator("cold_latency_range_ms", "cpu_range", "mem_range", "exec_range_ms")
    def check_range(cls, value: Range, field) -> Range:
        lo, hi = value
        if lo <= 0 or hi < lo:
            raise ValueError(f"{field.name} must satisfy 0 < lo <= hi, got {value}")
        return value

    @validator("runtime_tags", "trigger_tags")
    def check_tags(cls, value: list[str], field) -> list[str]:
        if not value:
            raise ValueError(f"{field.name} must not be empty")
        return value

    @root_validator(skip_on_failure=True)
    def check_exec_range(cls, values: dict) -> dict:
        lo, hi = values["exec_range_ms"]
        if int(lo) != lo or int(hi) != hi:
            raise ValueError("exec_range_ms bounds must be whole milliseconds")
        return values


class GeneratedTrace(BaseModel):
    invocations: list[Invocation]
    cold_logs: list[ColdStartEntry]
    fingerprint: str
