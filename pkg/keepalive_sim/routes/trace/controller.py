import logging
import math
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from config import get_settings
from pydantic import ValidationError
from util.csv import read_csv_rows, write_csv
from util.exception import DataError, format_validation_error
from util.seed import stable_digest64, stable_hash64

from .model import (
    COLD_LOG_COLUMNS,
    TRACE_COLUMNS,
    ArrivalModel,
    ColdStartEntry,
    ColdStartTable,
    GeneratedTrace,
    Invocation,
    SyntheticSpec,
    TraceSplit,
)

logger = logging.getLogger(__name__)


def load_trace(path: str | Path, cold_table: Optional[ColdStartTable] = None) -> list[Invocation]:
    """Trace Loader

    Args:
        path (str | Path): trace CSV, see TRACE_COLUMNS
        cold_table (ColdStartTable, optional): when given, every record is
            annotated with the cold-start latency of its (runtime, trigger) key

    Raises:
        DataError: missing file or column, malformed row (row number included),
            or a pod that shows up under two functions

    Returns:
        list[Invocation]: records sorted by ts_ms (stable)
    """
    invocations = []
    owners: dict[str, tuple[str, int]] = {}

    for row_number, row in read_csv_rows(path, TRACE_COLUMNS, "trace"):
        try:
            invocation = Invocation(**{column: row[column] for column in TRACE_COLUMNS})
        except ValidationError as e:
            raise DataError(f"trace {path}: {format_validation_error(e, row_number)}")

        owner = owners.setdefault(invocation.pod_id, (invocation.function_id, row_number))
        if owner[0] != invocation.function_id:
            raise DataError(
                f"trace {path}: pod bound to two functions: pod '{invocation.pod_id}' "
                f"appears under '{owner[0]}' (row {owner[1]}) and '{invocation.function_id}' (row {row_number})"
            )

        invocations.append(invocation)

    invocations.sort(key=lambda i: i.ts_ms)

    if cold_table is not None:
        invocations = annotate_cold(invocations, cold_table)

    logger.info(f"Loaded {len(invocations)} invocations over {len(owners)} pods from {path}")

    return invocations


def write_trace(invocations: Iterable[Invocation], path: str | Path) -> Path:
    return write_csv(path, TRACE_COLUMNS, (invocation.row() for invocation in invocations))


def annotate_cold(invocations: Iterable[Invocation], cold_table: ColdStartTable) -> list[Invocation]:
    return [
        invocation.copy(update={"cold_ms": cold_table.lookup(*invocation.cold_key)})
        for invocation in invocations
    ]


def load_cold_logs(path: str | Path) -> list[ColdStartEntry]:
    entries = []

    for row_number, row in read_csv_rows(path, COLD_LOG_COLUMNS, "cold-start log"):
        try:
            entries.append(ColdStartEntry(**{column: row[column] for column in COLD_LOG_COLUMNS}))
        except ValidationError as e:
            raise DataError(f"cold-start log {path}: {format_validation_error(e, row_number)}")

    return entries


def write_cold_logs(entries: Iterable[ColdStartEntry], path: str | Path) -> Path:
    return write_csv(
        path,
        COLD_LOG_COLUMNS,
        ((entry.runtime_tag, entry.trigger_tag, entry.cold_ms) for entry in entries),
    )


def _aggregate(values: list[float], statistic: str) -> float:
    match statistic:
        case "mean":
            return math.fsum(values) / len(values)
        case "median":
            return float(np.median(values))
    raise ValueError(f"unknown cold-start statistic '{statistic}'")


def build_cold_table(
    training_invocations: Iterable[Invocation],
    raw_cold_logs: Optional[str | Path | list[ColdStartEntry]],
    default_ms: Optional[float] = None,
    statistic: str = "mean",
) -> ColdStartTable:
    """Cold-start lookup table keyed by (runtime_tag, trigger_tag)

    Only log records whose key occurs in the training invocations are used
    (all records when no training invocations are given). The fallback is the
    global mean of the kept records, or `default_ms` when there are none.
    """
    default_ms = default_ms if default_ms is not None else get_settings().default_cold_ms

    if raw_cold_logs is None:
        records = []
    elif isinstance(raw_cold_logs, list):
        records = raw_cold_logs
    else:
        records = load_cold_logs(raw_cold_logs)

    seen = {invocation.cold_key for invocation in training_invocations}
    if seen:
        records = [r for r in records if (r.runtime_tag, r.trigger_tag) in seen]

    if not records:
        return ColdStartTable(entries=[], fallback_ms=default_ms)

    grouped: dict[tuple[str, str], list[float]] = {}
    for record in records:
        grouped.setdefault((record.runtime_tag, record.trigger_tag), []).append(record.cold_ms)

    entries = [
        ColdStartEntry(runtime_tag=runtime, trigger_tag=trigger, cold_ms=_aggregate(values, statistic))
        for (runtime, trigger), values in sorted(grouped.items())
    ]

    return ColdStartTable(
        entries=entries,
        fallback_ms=_aggregate([r.cold_ms for r in records], statistic),
    )


def split_by_pod(
    invocations: list[Invocation],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> TraceSplit:
    """Pod-grouped train/validation/test split

    Pods are ordered by a seeded 64-bit hash of their id and cut at the
    cumulative ratios over the pod count. Each partition keeps the global
    time order.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise DataError(f"split ratios must be three positive numbers, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios must sum to 1, got {tuple(ratios)} (sum {sum(ratios)})")
    if not invocations:
        raise DataError("cannot split an empty trace")

    pods = sorted({i.pod_id for i in invocations}, key=lambda pod: (stable_hash64(seed, pod), pod))
    n = len(pods)

    first = round(ratios[0] * n)
    second = round((ratios[0] + ratios[1]) * n)

    assignment = {pod: 0 for pod in pods[:first]}
    assignment.update({pod: 1 for pod in pods[first:second]})
    assignment.update({pod: 2 for pod in pods[second:]})

    partitions: list[list[Invocation]] = [[], [], []]
    for invocation in invocations:
        partitions[assignment[invocation.pod_id]].append(invocation)

    return TraceSplit(
        train=partitions[0], validation=partitions[1], test=partitions[2], split_seed=seed
    )


def _arrivals(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    duration = float(spec.duration_s)

    match spec.arrival_model:
        case ArrivalModel.deterministic:
            return np.arange(0.0, duration, spec.interval_s)

        case ArrivalModel.poisson:
            return _poisson(spec.rate_hz, duration, rng)

        case ArrivalModel.bimodal:
            # Thinning of a homogeneous process at the burst/lull maximum
            peak = max(spec.burst_rate_hz, spec.lull_rate_hz)
            candidates = _poisson(peak, duration, rng)
            phase = np.mod(candidates, spec.period_s) / spec.period_s
            rates = np.where(phase < spec.burst_fraction, spec.burst_rate_hz, spec.lull_rate_hz)
            keep = rng.random(candidates.size) < rates / peak
            return candidates[keep]

    raise ValueError(f"unknown arrival model {spec.arrival_model}")


def _poisson(rate_hz: float, duration_s: float, rng: np.random.Generator) -> np.ndarray:
    expected = rate_hz * duration_s
    chunk = int(expected + 6 * math.sqrt(expected) + 16)

    times = np.cumsum(rng.exponential(1.0 / rate_hz, size=chunk))
    while times[-1] < duration_s:
        more = np.cumsum(rng.exponential(1.0 / rate_hz, size=chunk)) + times[-1]
        times = np.concatenate([times, more])

    return times[times < duration_s]


def generate_trace(spec: SyntheticSpec) -> GeneratedTrace:
    """Synthetic trace, deterministic given `spec.seed`

    Each function gets a runtime/trigger pair and a resource request; each of
    its pods runs an independent arrival process. Cold-start log records are
    sampled per (runtime, trigger) key and every invocation is annotated with
    the mean of its key's records.
    """
    seed = spec.seed if spec.seed is not None else 0
    rng = np.random.default_rng(seed)

    functions = []
    for f in range(spec.n_functions):
        functions.append(
            {
                "function_id": f"fn-{f:03d}",
                "runtime_tag": spec.runtime_tags[int(rng.integers(len(spec.runtime_tags)))],
                "trigger_tag": spec.trigger_tags[int(rng.integers(len(spec.trigger_tags)))],
                "cpu_cores": round(float(rng.uniform(*spec.cpu_range)), 3),
                "mem_mb": round(float(rng.uniform(*spec.mem_range)), 1),
            }
        )

    cold_logs = []
    cold_ms = {}
    for key in sorted({(f["runtime_tag"], f["trigger_tag"]) for f in functions}):
        samples = [round(float(v), 3) for v in rng.uniform(*spec.cold_latency_range_ms, size=spec.cold_log_samples)]
        cold_logs.extend(ColdStartEntry(runtime_tag=key[0], trigger_tag=key[1], cold_ms=v) for v in samples)
        cold_ms[key] = _aggregate(samples, "mean")

    exec_lo, exec_hi = (int(v) for v in spec.exec_range_ms)

    rows = []
    for f, function in enumerate(functions):
        key = (function["runtime_tag"], function["trigger_tag"])
        for p in range(spec.n_pods_per_function):
            arrivals = _arrivals(spec, rng)
            exec_ms = rng.integers(exec_lo, exec_hi + 1, size=arrivals.size)
            pod_id = f"pod-{f:03d}-{p:03d}"
            for t, e in zip(arrivals, exec_ms):
                rows.append(
                    Invocation(
                        ts_ms=int(round(t * 1000.0)),
                        pod_id=pod_id,
                        exec_ms=int(e),
                        cold_ms=cold_ms[key],
                        **function,
                    )
                )

    rows.sort(key=lambda i: (i.ts_ms, i.pod_id))

    logger.info(
        f"Generated {len(rows)} invocations ({spec.arrival_model.value}, "
        f"{spec.n_functions}x{spec.n_pods_per_function} pods, seed {seed})"
    )

    return GeneratedTrace(invocations=rows, cold_logs=cold_logs, fingerprint=fingerprint(rows))


def long_tail_subset(invocations: list[Invocation], quantile: float = 0.9) -> list[Invocation]:
    """Invocations whose cold-start latency is at or above the given quantile"""
    if not 0 <= quantile <= 1:
        raise ValueError(f"quantile must be in [0, 1], got {quantile}")
    if not invocations:
        return []
    if any(i.cold_ms is None for i in invocations):
        raise DataError("long-tail selection needs cold-start annotated invocations")

    threshold = float(np.quantile([i.cold_ms for i in invocations], quantile))
    return [i for i in invocations if i.cold_ms >= threshold]


def fingerprint(invocations: Iterable[Invocation]) -> str:
    return stable_digest64(sorted(invocation.row() for invocation in invocations))
