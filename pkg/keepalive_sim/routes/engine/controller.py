import logging
import math
from dataclasses import replace
from typing import Callable, Sequence

import numpy as np
from util.exception import DataError, PolicyError

from ..carbon.controller import (
    active_power_w,
    ci_at,
    cold_energy,
    exec_energy,
    idle_energy,
    integrate_carbon,
)
from ..carbon.model import carbon_breakdown, phase_energy
from ..metrics.controller import aggregate
from ..metrics.model import SimReport
from ..policies.controller import unit_scales
from ..policies.model import DecisionContext, FunctionPolicy, KeepAlivePolicy
from ..trace.controller import fingerprint as trace_fingerprint
from ..trace.model import Invocation
from .model import PodRuntimeState, Resolution, SimConfig, StepOutcome, Warmth

logger = logging.getLogger(__name__)


def classify(pod: PodRuntimeState | None, arrival_ms: float) -> Warmth:
    # Arrival exactly at expiry still finds the pod warm
    if pod is None or pod.warm_until_ms is None:
        return Warmth.cold
    return Warmth.warm if arrival_ms <= pod.warm_until_ms else Warmth.cold


def reuse_probabilities(
    pod: PodRuntimeState, action_set_s: Sequence[float], prior: float = 0.5
) -> np.ndarray:
    """Fraction of the pod's recent inter-reuse intervals that are <= k, per k"""
    actions = np.asarray(action_set_s, dtype=np.float64)

    if not pod.reuse_history:
        return np.full(actions.size, prior)

    history = np.fromiter(pod.reuse_history, dtype=np.float64, count=len(pod.reuse_history))
    return (history[None, :] <= actions[:, None]).mean(axis=1)


def as_policy(policy: KeepAlivePolicy | Callable[[DecisionContext], float]) -> KeepAlivePolicy:
    if isinstance(policy, KeepAlivePolicy):
        return policy
    return FunctionPolicy(getattr(policy, "__name__", "custom"), policy)


def check_trace(trace: Sequence[Invocation]) -> None:
    if not trace:
        raise DataError("cannot simulate an empty trace")

    for index in range(1, len(trace)):
        if trace[index].ts_ms < trace[index - 1].ts_ms:
            raise DataError(
                f"trace is not sorted by ts_ms: record {index} ({trace[index].ts_ms}) "
                f"precedes record {index - 1} ({trace[index - 1].ts_ms})"
            )

    if any(invocation.cold_ms is None for invocation in trace):
        raise DataError("trace has invocations without a cold-start latency, build a cold-start table first")


def ensure_scales(trace: Sequence[Invocation], cfg: SimConfig) -> SimConfig:
    if cfg.has_scales:
        return cfg

    sigma_l, sigma_c = unit_scales(trace, cfg)
    logger.warning(
        f"Unit scales not configured, inferred from the evaluated trace: sigma_l={sigma_l:.6g} sigma_c={sigma_c:.6g}"
    )
    return cfg.copy(
        update={
            "sigma_l": cfg.sigma_l if cfg.sigma_l is not None else sigma_l,
            "sigma_c": cfg.sigma_c if cfg.sigma_c is not None else sigma_c,
        }
    )


def _next_arrivals(trace: Sequence[Invocation]) -> list[int | None]:
    upcoming: list[int | None] = [None] * len(trace)
    last_seen: dict[str, int] = {}

    for index in range(len(trace) - 1, -1, -1):
        upcoming[index] = last_seen.get(trace[index].pod_id)
        last_seen[trace[index].pod_id] = index

    return upcoming


def run(
    trace: Sequence[Invocation],
    policy: KeepAlivePolicy | Callable[[DecisionContext], float],
    cfg: SimConfig,
    fingerprint: str | None = None,
) -> tuple[SimReport, list[StepOutcome]]:
    """Replays `trace` with `policy` deciding every keep-alive

    Per invocation: classify warm/cold, charge the idle span since the pod's
    previous completion (min of the gap and the previous keep-alive, at the
    intensity of the span start), charge cold and exec phases at the arrival
    intensity, then ask the policy for the next keep-alive. Every pod still
    holding a keep-alive at the end is charged it in full.
    """
    check_trace(trace)
    cfg = ensure_scales(trace, cfg)
    policy = as_policy(policy)
    policy.reset(cfg)
    policy.prepare(trace, cfg)

    profile = cfg.profile
    timeline = cfg.timeline
    offset = cfg.offset_ms
    split = cfg.split_spans
    actions = tuple(cfg.action_set_s)
    allowed = set(actions)
    upcoming = _next_arrivals(trace) if policy.requires_future else None

    pods: dict[str, PodRuntimeState] = {}
    outcomes: list[StepOutcome] = []
    overlaps = 0

    for index, invocation in enumerate(trace):
        pod = pods.get(invocation.pod_id)
        first_seen = pod is None
        if first_seen:
            pod = PodRuntimeState(
                pod_id=invocation.pod_id,
                function_id=invocation.function_id,
                cpu_cores=invocation.cpu_cores,
                mem_mb=invocation.mem_mb,
                window_w=cfg.window_w,
            )
            pods[invocation.pod_id] = pod

        arrival = float(invocation.ts_ms)
        was_cold = classify(pod, arrival) is Warmth.cold
        power = active_power_w(profile, pod.mem_mb, pod.cpu_cores)

        idle_s = idle_j = idle_g = 0.0
        if not first_seen:
            gap_ms = arrival - pod.last_completion_ms
            if gap_ms < 0:
                overlaps += 1
                gap_ms = 0.0
            gap_s = gap_ms / 1000.0

            idle_s = min(gap_s, pod.last_decision_s)
            idle_j = idle_energy(profile, pod.mem_mb, pod.cpu_cores, idle_s)
            idle_g = integrate_carbon(
                timeline, profile.lambda_idle * power, offset + pod.last_completion_ms, idle_s, split
            )
            pod.reuse_history.append(gap_s)

            policy.feedback(
                Resolution(
                    pod_id=pod.pod_id,
                    action_s=pod.last_decision_s,
                    was_cold=was_cold,
                    idle_s=idle_s,
                    idle_g=idle_g,
                    cold_ms=invocation.cold_ms,
                )
            )

        cold_ms = invocation.cold_ms if was_cold else 0.0
        exec_s = invocation.exec_ms / 1000.0
        ci_arrival = ci_at(timeline, offset + arrival)

        exec_j = exec_energy(profile, invocation.mem_mb, invocation.cpu_cores, exec_s)
        cold_j = cold_energy(profile, invocation.cpu_cores, cold_ms / 1000.0)
        exec_g = integrate_carbon(
            timeline, active_power_w(profile, invocation.mem_mb, invocation.cpu_cores), offset + arrival, exec_s, split
        )
        cold_g = integrate_carbon(
            timeline, profile.p_cold_w_per_core * invocation.cpu_cores, offset + arrival, cold_ms / 1000.0, split
        )

        start = arrival if first_seen else max(arrival, pod.last_completion_ms)
        completion = start + invocation.exec_ms + (cold_ms if cfg.cold_delays_expiry else 0.0)
        ci_now = ci_at(timeline, offset + completion)

        next_gap_s = next_cold_ms = None
        if upcoming is not None:
            following = upcoming[index]
            if following is None:
                next_gap_s = math.inf
            else:
                next_gap_s = max(0.0, trace[following].ts_ms - completion) / 1000.0
                next_cold_ms = trace[following].cold_ms

        ctx = DecisionContext(
            pod_id=pod.pod_id,
            function_id=pod.function_id,
            ts_ms=invocation.ts_ms,
            p_k=reuse_probabilities(pod, actions, cfg.prior_p),
            cpu_cores=pod.cpu_cores,
            mem_mb=pod.mem_mb,
            l_cold_ms=invocation.cold_ms,
            ci_now=ci_now,
            lambda_carbon=cfg.lambda_carbon,
            action_set_s=actions,
            profile=profile,
            sigma_l=cfg.sigma_l,
            sigma_c=cfg.sigma_c,
            next_gap_s=next_gap_s,
            next_cold_ms=next_cold_ms,
        )

        k = policy(ctx)
        if k not in allowed:
            raise PolicyError(f"policy '{policy.name}' chose {k}s, not in the action set {list(actions)}")
        k = float(k)

        pod.warm_until_ms = completion + k * 1000.0
        pod.last_decision_s = k
        pod.last_completion_ms = completion
        pod.last_outcome = len(outcomes)

        outcomes.append(
            StepOutcome(
                ts_ms=invocation.ts_ms,
                function_id=invocation.function_id,
                pod_id=invocation.pod_id,
                was_cold=was_cold,
                first_seen=first_seen,
                e2e_ms=cold_ms + invocation.exec_ms + cfg.network_const_ms,
                idle_s=idle_s,
                residual_idle_s=0.0,
                energy=phase_energy(exec_j, idle_j, cold_j),
                carbon=carbon_breakdown(exec_g, idle_g, cold_g),
                action_s=k,
                ci=ci_arrival,
                cold_ms=invocation.cold_ms,
            )
        )

    # Residual keep-alive of every pod, charged into its last outcome
    for pod_id in sorted(pods):
        pod = pods[pod_id]
        residual_s = pod.last_decision_s
        power = active_power_w(profile, pod.mem_mb, pod.cpu_cores)
        residual_j = idle_energy(profile, pod.mem_mb, pod.cpu_cores, residual_s)
        residual_g = integrate_carbon(
            timeline, profile.lambda_idle * power, offset + pod.last_completion_ms, residual_s, split
        )

        last = outcomes[pod.last_outcome]
        outcomes[pod.last_outcome] = replace(
            last,
            residual_idle_s=residual_s,
            energy=phase_energy(last.energy.exec_j, last.energy.idle_j + residual_j, last.energy.cold_j),
            carbon=carbon_breakdown(last.carbon.exec_g, last.carbon.idle_g + residual_g, last.carbon.cold_g),
        )

        policy.feedback(
            Resolution(
                pod_id=pod_id,
                action_s=residual_s,
                was_cold=False,
                idle_s=residual_s,
                idle_g=residual_g,
                cold_ms=0.0,
                terminal=True,
            )
        )

    if overlaps:
        logger.warning(f"{overlaps} invocation(s) arrived while their pod was still busy, serialized")

    report = aggregate(
        outcomes,
        cfg,
        policy=policy.name,
        fingerprint=fingerprint or trace_fingerprint(trace),
        overlap_count=overlaps,
    )

    return report, outcomes
