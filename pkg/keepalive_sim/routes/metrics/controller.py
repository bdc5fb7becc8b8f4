import logging
import math
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from pydantic import BaseModel
from util.csv import write_csv
from util.exception import DataError
from util.files import atomic_write_text

from ..carbon.controller import MS_PER_HOUR, ci_at
from ..carbon.model import CarbonTimeline
from ..engine.model import OUTCOME_COLUMNS, SimConfig, StepOutcome
from ..policies.controller import weighted_cost
from .model import (
    ComparisonRow,
    ComparisonTable,
    GapRow,
    HourlyPoint,
    IntensityBucket,
    SimReport,
)

logger = logging.getLogger(__name__)


def action_label(action_s: float) -> str:
    return f"{action_s:g}"


def _hour_start(t_ms: float) -> int:
    return int(t_ms // MS_PER_HOUR) * MS_PER_HOUR


def _hour_ci(timeline: CarbonTimeline, hour_start_ms: int) -> float:
    return ci_at(timeline, max(hour_start_ms, timeline.first_ms))


def aggregate(
    outcomes: Sequence[StepOutcome],
    cfg: SimConfig,
    policy: str = "",
    fingerprint: str = "",
    overlap_count: int = 0,
) -> SimReport:
    """Run totals from per-invocation outcomes

    Sums use math.fsum so the report does not depend on outcome order. The
    weighted cost covers decision outcomes only; the first cold start of a
    pod is not the consequence of any keep-alive choice.
    """
    if not outcomes:
        raise DataError("cannot aggregate an empty outcome sequence")

    lam = cfg.lambda_carbon
    sigma_l = cfg.sigma_l if cfg.sigma_l is not None else 1.0
    sigma_c = cfg.sigma_c if cfg.sigma_c is not None else 1.0

    n = len(outcomes)
    keep_alive_g = math.fsum(o.carbon.idle_g for o in outcomes)
    cold_g = math.fsum(o.carbon.cold_g for o in outcomes)
    exec_g = math.fsum(o.carbon.exec_g for o in outcomes)
    total_g = keep_alive_g + cold_g + exec_g

    cold_starts = sum(1 for o in outcomes if o.was_cold)
    mean_latency_s = math.fsum(o.e2e_ms for o in outcomes) / n / 1000.0

    cost = math.fsum(
        weighted_cost(
            lam,
            sigma_l,
            sigma_c,
            o.cold_ms if (o.was_cold and not o.first_seen) else 0.0,
            o.carbon.idle_g,
        )
        for o in outcomes
    )

    histogram: dict[str, int] = {}
    for action in cfg.action_set_s:
        histogram[action_label(action)] = 0
    for o in outcomes:
        histogram[action_label(o.action_s)] = histogram.get(action_label(o.action_s), 0) + 1

    return SimReport(
        policy=policy,
        fingerprint=fingerprint,
        invocations=n,
        pods=len({o.pod_id for o in outcomes}),
        cold_start_count=cold_starts,
        mean_e2e_latency_s=mean_latency_s,
        keep_alive_carbon_g=keep_alive_g,
        cold_carbon_g=cold_g,
        exec_carbon_g=exec_g,
        total_carbon_g=total_g,
        keep_alive_energy_j=math.fsum(o.energy.idle_j for o in outcomes),
        cold_energy_j=math.fsum(o.energy.cold_j for o in outcomes),
        exec_energy_j=math.fsum(o.energy.exec_j for o in outcomes),
        keep_alive_s=math.fsum(o.idle_s + o.residual_idle_s for o in outcomes),
        lcp=mean_latency_s * total_g,
        iri=cold_starts * keep_alive_g,
        weighted_cost=cost,
        decision_histogram=histogram,
        hourly=hourly_series(outcomes, cfg),
        lambda_carbon=lam,
        sigma_l=sigma_l,
        sigma_c=sigma_c,
        seed=cfg.seed,
        profile=cfg.profile.name,
        overlap_count=overlap_count,
    )


def hourly_series(outcomes: Iterable[StepOutcome], cfg: SimConfig) -> list[HourlyPoint]:
    buckets: dict[int, list[StepOutcome]] = {}
    for o in outcomes:
        buckets.setdefault(_hour_start(cfg.offset_ms + o.ts_ms), []).append(o)

    return [
        HourlyPoint(
            hour_start_ms=hour,
            ci_g_per_kwh=_hour_ci(cfg.timeline, hour),
            invocations=len(bucket),
            cold_starts=sum(1 for o in bucket if o.was_cold),
            keep_alive_carbon_g=math.fsum(o.carbon.idle_g for o in bucket),
            total_carbon_g=math.fsum(o.carbon.total_g for o in bucket),
            mean_action_s=math.fsum(o.action_s for o in bucket) / len(bucket),
        )
        for hour, bucket in sorted(buckets.items())
    ]


def _increase_pct(value: float, base: float) -> Optional[float]:
    # Undefined over a zero baseline
    if value == base:
        return 0.0
    if base == 0:
        return None
    return (value - base) / base * 100.0


def compare(reports: Mapping[str, SimReport]) -> ComparisonTable:
    """Tradeoff coordinates per report

    x: cold-start increase (%) over the report with the fewest cold starts.
    y: keep-alive carbon increase (%) over the report with the least of it.
    Rows are ranked by distance to the origin, undefined distances last.
    """
    if not reports:
        raise DataError("nothing to compare")

    fingerprints = {report.fingerprint for report in reports.values()}
    if len(fingerprints) > 1:
        raise DataError(f"reports come from different traces: {', '.join(sorted(fingerprints))}")

    min_cold = min(r.cold_start_count for r in reports.values())
    min_carbon = min(r.keep_alive_carbon_g for r in reports.values())

    rows = []
    for name, report in reports.items():
        x = _increase_pct(report.cold_start_count, min_cold)
        y = _increase_pct(report.keep_alive_carbon_g, min_carbon)
        rows.append(
            ComparisonRow(
                rank=0,
                policy=name,
                cold_start_count=report.cold_start_count,
                keep_alive_carbon_g=report.keep_alive_carbon_g,
                total_carbon_g=report.total_carbon_g,
                mean_e2e_latency_s=report.mean_e2e_latency_s,
                lcp=report.lcp,
                iri=report.iri,
                weighted_cost=report.weighted_cost,
                cold_increase_pct=x,
                carbon_increase_pct=y,
                distance=None if x is None or y is None else math.hypot(x, y),
            )
        )

    rows.sort(key=lambda row: (row.distance is None, row.distance or 0.0, row.policy))
    for rank, row in enumerate(rows, start=1):
        row.rank = rank

    best = min(rows, key=lambda row: (row.weighted_cost, row.policy))

    return ComparisonTable(fingerprint=fingerprints.pop(), rows=rows, min_weighted_cost_policy=best.policy)


def dedupe_lambdas(grid: Iterable[float]) -> list[float]:
    values = [float(v) for v in grid]
    unique = sorted(set(values))

    if len(unique) != len(values):
        logger.warning(f"Duplicate values dropped from sweep grid {values}")

    return unique


def decision_intensity_profile(
    outcomes: Iterable[StepOutcome], timeline: CarbonTimeline, offset_ms: int | None = None
) -> list[IntensityBucket]:
    """Per-hour share of each chosen keep-alive, paired with the hour's intensity"""
    offset = timeline.first_ms if offset_ms is None else offset_ms

    buckets: dict[int, dict[str, int]] = {}
    totals: dict[int, list[float]] = {}
    for o in outcomes:
        hour = _hour_start(offset + o.ts_ms)
        counts = buckets.setdefault(hour, {})
        counts[action_label(o.action_s)] = counts.get(action_label(o.action_s), 0) + 1
        totals.setdefault(hour, []).append(o.action_s)

    profile = []
    for hour, counts in sorted(buckets.items()):
        decisions = sum(counts.values())
        profile.append(
            IntensityBucket(
                hour_start_ms=hour,
                ci_g_per_kwh=_hour_ci(timeline, hour),
                decisions=decisions,
                frequencies={label: count / decisions for label, count in sorted(counts.items(), key=lambda kv: float(kv[0]))},
                mean_action_s=math.fsum(totals[hour]) / decisions,
            )
        )

    return profile


def oracle_gap(rl: SimReport, oracle: SimReport) -> list[GapRow]:
    """Relative degradation of the learned policy against the oracle"""
    metrics = ["keep_alive_carbon_g", "cold_start_count", "mean_e2e_latency_s", "total_carbon_g"]

    return [
        GapRow(
            metric=metric,
            rl=float(getattr(rl, metric)),
            oracle=float(getattr(oracle, metric)),
            gap_pct=_increase_pct(float(getattr(rl, metric)), float(getattr(oracle, metric))),
        )
        for metric in metrics
    ]


def write_report(report: BaseModel, path: str | Path) -> Path:
    return atomic_write_text(path, report.json(indent=2) + "\n")


def write_outcomes(outcomes: Iterable[StepOutcome], path: str | Path) -> Path:
    return write_csv(path, OUTCOME_COLUMNS, (o.row() for o in outcomes))


def write_rows(rows: Sequence[BaseModel], path: str | Path, columns: list[str] | None = None) -> Path:
    """CSV of flat models, one column per field (dict fields expanded as `field:key`)"""
    if columns is None:
        columns = []
        for row in rows:
            for name, value in row.dict().items():
                keys = [f"{name}:{key}" for key in value] if isinstance(value, dict) else [name]
                columns.extend(key for key in keys if key not in columns)

    def cells(row: BaseModel) -> list:
        flat = {}
        for name, value in row.dict().items():
            if isinstance(value, dict):
                flat.update({f"{name}:{key}": v for key, v in value.items()})
            else:
                flat[name] = value
        return [flat.get(column, "") for column in columns]

    return write_csv(path, columns, (cells(row) for row in rows))
