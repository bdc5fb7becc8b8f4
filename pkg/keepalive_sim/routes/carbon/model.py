from typing import Optional

from pydantic import BaseModel, PrivateAttr, confloat, root_validator, validator


class CarbonSample(BaseModel):
    hour_start_ms: int
    ci_g_per_kwh: confloat(ge=0)

    class Config:
        frozen = True


class CarbonTimeline(BaseModel):
    """Right-continuous step function of grid carbon intensity (gCO2/kWh)"""

    samples: list[CarbonSample]

    _starts: list[int] = PrivateAttr(default_factory=list)

    class Config:
        frozen = True
        copy_on_model_validation = "none"

    def __init__(self, **data):
        super().__init__(**data)
        self._starts = [sample.hour_start_ms for sample in self.samples]

    @validator("samples")
    def check_samples(cls, samples: list[CarbonSample]) -> list[CarbonSample]:
        if not samples:
            raise ValueError("a carbon timeline needs at least one sample")

        for prev, curr in zip(samples, samples[1:]):
            if curr.hour_start_ms <= prev.hour_start_ms:
                raise ValueError(
                    f"sample starts must be strictly increasing ({prev.hour_start_ms} then {curr.hour_start_ms})"
                )

        return samples

    @property
    def starts(self) -> list[int]:
        return self._starts

    @property
    def first_ms(self) -> int:
        return self._starts[0]


class EnergyProfile(BaseModel):
    name: str = "custom"
    j_cpu_core_w: confloat(gt=0)
    j_dram_mb_w: confloat(gt=0)
    lambda_idle: confloat(gt=0, le=1) = 0.2
    p_cold_w_per_core: confloat(gt=0)

    # Measured footprint of the profiled function, when the preset has one
    reference_mem_mb: Optional[confloat(gt=0)]
    reference_cold_ms: Optional[confloat(gt=0)]

    class Config:
        frozen = True
        copy_on_model_validation = "none"
        extra = "forbid"


class PhaseEnergy(BaseModel):
    exec_j: confloat(ge=0) = 0.0
    idle_j: confloat(ge=0) = 0.0
    cold_j: confloat(ge=0) = 0.0


class CarbonBreakdown(BaseModel):
    exec_g: confloat(ge=0) = 0.0
    idle_g: confloat(ge=0) = 0.0
    cold_g: confloat(ge=0) = 0.0
    total_g: float = 0.0

    @root_validator(skip_on_failure=True)
    def set_total(cls, values: dict) -> dict:
        values["total_g"] = values["exec_g"] + values["idle_g"] + values["cold_g"]
        return values


def phase_energy(exec_j: float, idle_j: float, cold_j: float) -> PhaseEnergy:
    # Engine hot path, inputs are already non-negative
    return PhaseEnergy.construct(exec_j=exec_j, idle_j=idle_j, cold_j=cold_j)


def carbon_breakdown(exec_g: float, idle_g: float, cold_g: float) -> CarbonBreakdown:
    return CarbonBreakdown.construct(
        exec_g=exec_g, idle_g=idle_g, cold_g=cold_g, total_g=exec_g + idle_g + cold_g
    )
