import math
from bisect import bisect_right
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Optional

import pytz
import yaml
from config import DEFAULT_PROFILES_FILE, get_settings
from dateutil.parser import isoparse
from pydantic import ValidationError
from util.csv import read_csv_rows, write_csv
from util.exception import DataError, format_validation_error
from util.files import read_text

from .model import CarbonSample, CarbonTimeline, EnergyProfile


JOULES_PER_KWH = 3.6e6
MS_PER_HOUR = 3_600_000

EPOCH = datetime(1970, 1, 1, tzinfo=pytz.utc)
TIMELINE_COLUMNS = ["hour_start_iso8601", "ci_g_per_kwh"]


def _non_negative(name: str, value: float) -> None:
    if value < 0:
        raise ValueError(f"{name} must be >= 0, got {value}")


def active_power_w(profile: EnergyProfile, mem_mb: float, cpu_cores: float) -> float:
    _non_negative("mem_mb", mem_mb)
    _non_negative("cpu_cores", cpu_cores)
    return profile.j_dram_mb_w * mem_mb + profile.j_cpu_core_w * cpu_cores


def exec_energy(profile: EnergyProfile, mem_mb: float, cpu_cores: float, t_exec_s: float) -> float:
    """Execution-phase energy in joules: (J_dram * mem + J_cpu * cores) * t"""
    _non_negative("t_exec_s", t_exec_s)
    return active_power_w(profile, mem_mb, cpu_cores) * t_exec_s


def idle_energy(profile: EnergyProfile, mem_mb: float, cpu_cores: float, t_idle_s: float) -> float:
    """Keep-alive energy in joules, active power scaled by lambda_idle"""
    _non_negative("t_idle_s", t_idle_s)
    return profile.lambda_idle * active_power_w(profile, mem_mb, cpu_cores) * t_idle_s


def cold_energy(profile: EnergyProfile, cpu_cores: float, t_cold_s: float) -> float:
    _non_negative("cpu_cores", cpu_cores)
    _non_negative("t_cold_s", t_cold_s)
    return profile.p_cold_w_per_core * cpu_cores * t_cold_s


def to_carbon(energy_j: float, ci: float) -> float:
    """Joules to grams of CO2 at intensity `ci` (gCO2/kWh)"""
    _non_negative("energy_j", energy_j)
    _non_negative("ci", ci)
    return energy_j / JOULES_PER_KWH * ci


def ci_at(timeline: CarbonTimeline, t_ms: float) -> float:
    if t_ms < timeline.first_ms:
        raise ValueError(
            f"t_ms={t_ms} precedes the first carbon sample at {timeline.first_ms}"
        )

    index = bisect_right(timeline.starts, t_ms) - 1
    return timeline.samples[index].ci_g_per_kwh


def integrate_carbon(
    timeline: CarbonTimeline,
    power_w: float,
    start_ms: float,
    duration_s: float,
    split_spans: bool = False,
) -> float:
    """Grams of CO2 emitted drawing `power_w` for `duration_s` from `start_ms`

    By default the whole span is charged at the intensity of its start. With
    `split_spans` the span is cut at every sample boundary it crosses.
    """
    _non_negative("power_w", power_w)
    _non_negative("duration_s", duration_s)

    if not split_spans or duration_s == 0:
        return to_carbon(power_w * duration_s, ci_at(timeline, start_ms))

    if start_ms < timeline.first_ms:
        raise ValueError(
            f"start_ms={start_ms} precedes the first carbon sample at {timeline.first_ms}"
        )

    starts = timeline.starts
    end_ms = start_ms + duration_s * 1000.0
    index = bisect_right(starts, start_ms) - 1

    pieces = []
    cursor = start_ms
    while cursor < end_ms:
        boundary = starts[index + 1] if index + 1 < len(starts) else math.inf
        segment_end = min(end_ms, boundary)
        pieces.append(
            to_carbon(power_w * (segment_end - cursor) / 1000.0, timeline.samples[index].ci_g_per_kwh)
        )
        cursor = segment_end
        index += 1

    return math.fsum(pieces)


def to_epoch_ms(moment: datetime) -> int:
    if moment.tzinfo is None:
        moment = pytz.utc.localize(moment)
    return (moment - EPOCH) // timedelta(milliseconds=1)


def from_epoch_ms(value: int) -> datetime:
    return EPOCH + timedelta(milliseconds=value)


def load_timeline(path: str | Path) -> CarbonTimeline:
    """Reads a `hour_start_iso8601,ci_g_per_kwh` CSV. Naive timestamps are UTC."""
    samples = []

    for row_number, row in read_csv_rows(path, TIMELINE_COLUMNS, "carbon timeline"):
        try:
            moment = isoparse(row["hour_start_iso8601"])
        except (TypeError, ValueError) as e:
            raise DataError(f"carbon timeline {path}: row {row_number}: hour_start_iso8601: {e}")

        try:
            samples.append(
                CarbonSample(hour_start_ms=to_epoch_ms(moment), ci_g_per_kwh=row["ci_g_per_kwh"])
            )
        except ValidationError as e:
            raise DataError(f"carbon timeline {path}: {format_validation_error(e, row_number)}")

    try:
        return CarbonTimeline(samples=samples)
    except ValidationError as e:
        raise DataError(f"carbon timeline {path}: {format_validation_error(e)}")


def write_timeline(timeline: CarbonTimeline, path: str | Path) -> Path:
    rows = (
        (from_epoch_ms(s.hour_start_ms).isoformat().replace("+00:00", "Z"), s.ci_g_per_kwh)
        for s in timeline.samples
    )
    return write_csv(path, TIMELINE_COLUMNS, rows)


def timeline_from_values(values: Iterable[float], start_ms: int = 0) -> CarbonTimeline:
    """Hourly timeline, one sample per value starting at `start_ms`"""
    return CarbonTimeline(
        samples=[
            CarbonSample(hour_start_ms=start_ms + i * MS_PER_HOUR, ci_g_per_kwh=value)
            for i, value in enumerate(values)
        ]
    )


def constant_timeline(ci: float, start_ms: int = 0) -> CarbonTimeline:
    return timeline_from_values([ci], start_ms)


def alternating_timeline(values: list[float], hours: int, start_ms: int = 0) -> CarbonTimeline:
    """Cycles `values` hour by hour for `hours` hours"""
    if not values or hours < 1:
        raise ValueError("alternating timeline needs at least one value and one hour")
    return timeline_from_values([values[h % len(values)] for h in range(hours)], start_ms)


def load_profiles(path: Optional[str | Path] = None) -> dict[str, EnergyProfile]:
    source = path or get_settings().profiles_file or DEFAULT_PROFILES_FILE

    try:
        document = yaml.safe_load(read_text(source, "energy profile file"))
    except yaml.YAMLError as e:
        raise DataError(f"energy profile file {source} is not valid YAML: {e}")

    entries = (document or {}).get("profiles") if isinstance(document, dict) else None
    if not isinstance(entries, dict) or not entries:
        raise DataError(f"energy profile file {source} has no 'profiles' mapping")

    profiles = {}
    for name, values in entries.items():
        try:
            profiles[name] = EnergyProfile(name=name, **(values or {}))
        except (TypeError, ValidationError) as e:
            detail = format_validation_error(e) if isinstance(e, ValidationError) else str(e)
            raise DataError(f"energy profile '{name}': {detail}")

    return profiles


def get_profile(name: str, path: Optional[str | Path] = None) -> EnergyProfile:
    profiles = load_profiles(path)

    if name not in profiles:
        raise DataError(
            f"unknown energy profile '{name}', available: {', '.join(sorted(profiles))}"
        )

    return profiles[name]
