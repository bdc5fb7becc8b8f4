from typing import Optional

from pydantic import BaseModel


class HourlyPoint(BaseModel):
    hour_start_ms: int
    ci_g_per_kwh: float
    invocations: int
    cold_starts: int
    keep_alive_carbon_g: float
    total_carbon_g: float
    mean_action_s: float


class SimReport(BaseModel):
    policy: str
    fingerprint: str
    invocations: int
    pods: int

    cold_start_count: int
    mean_e2e_latency_s: float

    keep_alive_carbon_g: float
    cold_carbon_g: float
    exec_carbon_g: float
    total_carbon_g: float

    keep_alive_energy_j: float
    cold_energy_j: float
    exec_energy_j: float
    keep_alive_s: float

    # mean latency (s) x total carbon (g)
    lcp: float
    # cold starts x keep-alive carbon (g)
    iri: float
    weighted_cost: float

    decision_histogram: dict[str, int]
    hourly: list[HourlyPoint]

    lambda_carbon: float
    sigma_l: float
    sigma_c: float
    seed: int
    profile: str
    overlap_count: int = 0


class ComparisonRow(BaseModel):
    rank: int
    policy: str
    cold_start_count: int
    keep_alive_carbon_g: float
    total_carbon_g: float
    mean_e2e_latency_s: float
    lcp: float
    iri: float
    weighted_cost: float
    # None when the baseline is zero and this row is not
    cold_increase_pct: Optional[float]
    carbon_increase_pct: Optional[float]
    distance: Optional[float]


class ComparisonTable(BaseModel):
    fingerprint: str
    rows: list[ComparisonRow]
    min_weighted_cost_policy: str


class SweepRow(BaseModel):
    parameter: str
    value: float
    policy: str
    cold_start_count: int
    keep_alive_carbon_g: float
    total_carbon_g: float
    mean_e2e_latency_s: float
    weighted_cost: float


class IntensityBucket(BaseModel):
    hour_start_ms: int
    ci_g_per_kwh: float
    decisions: int
    frequencies: dict[str, float]
    mean_action_s: float


class GapRow(BaseModel):
    metric: str
    rl: float
    oracle: float
    gap_pct: Optional[float]
