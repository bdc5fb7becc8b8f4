import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from util.exception import DataError, PolicyError
from util.seed import derive_seed

from ..carbon.controller import JOULES_PER_KWH, active_power_w, ci_at, idle_energy, integrate_carbon, to_carbon
from ..engine.model import SimConfig
from ..trace.model import Invocation
from .model import CostPair, DecisionContext, FunctionPolicy, KeepAlivePolicy, PolicyInfo, PolicyName

logger = logging.getLogger(__name__)

PSO_INERTIA = 0.7
PSO_COGNITIVE = 1.5
PSO_SOCIAL = 1.5


def weighted_cost(
    lambda_carbon: float, sigma_l: float, sigma_c: float, cold_ms: float, carbon_g: float
) -> float:
    """(1 - lambda) * cold * sigma_l + lambda * carbon * sigma_c

    The one scalar cost shared by planning policies, the oracle, the training
    reward and the reports, so all of them agree to the last bit.
    """
    return (1.0 - lambda_carbon) * cold_ms * sigma_l + lambda_carbon * carbon_g * sigma_c


def _action_index(ctx: DecisionContext, k: float) -> int:
    try:
        return ctx.action_set_s.index(k)
    except ValueError:
        raise PolicyError(f"unknown action {k}s, expected one of {list(ctx.action_set_s)}")


def _idle_power_w(ctx: DecisionContext) -> float:
    return ctx.profile.lambda_idle * active_power_w(ctx.profile, ctx.mem_mb, ctx.cpu_cores)


def cost_pair(ctx: DecisionContext, k: float) -> CostPair:
    index = _action_index(ctx, k)
    return CostPair(
        c_cold=(1.0 - float(ctx.p_k[index])) * ctx.l_cold_ms,
        c_carbon=to_carbon(idle_energy(ctx.profile, ctx.mem_mb, ctx.cpu_cores, k), ctx.ci_now),
    )


def cost_vectors(ctx: DecisionContext) -> tuple[np.ndarray, np.ndarray]:
    # Same operation order as cost_pair, element by element
    ks = np.asarray(ctx.action_set_s, dtype=np.float64)
    c_cold = (1.0 - np.asarray(ctx.p_k, dtype=np.float64)) * ctx.l_cold_ms
    c_carbon = _idle_power_w(ctx) * ks / JOULES_PER_KWH * ctx.ci_now
    return c_cold, c_carbon


def weighted_costs(ctx: DecisionContext) -> np.ndarray:
    c_cold, c_carbon = cost_vectors(ctx)
    return weighted_cost(ctx.lambda_carbon, ctx.sigma_l, ctx.sigma_c, c_cold, c_carbon)


def fixed_policy(k0: float, action_set_s: Optional[Sequence[float]] = None) -> KeepAlivePolicy:
    if action_set_s is not None and k0 not in action_set_s:
        raise PolicyError(f"fixed keep-alive {k0}s is not in the action set {list(action_set_s)}")

    k0 = float(k0)
    return FunctionPolicy(f"fixed-{k0:g}", lambda ctx: k0)


def latency_min(ctx: DecisionContext) -> float:
    # np.argmin keeps the first minimum, i.e. the smallest k
    c_cold, _ = cost_vectors(ctx)
    return ctx.action_set_s[int(np.argmin(c_cold))]


def carbon_min(ctx: DecisionContext) -> float:
    return min(ctx.action_set_s)


def weighted_greedy(ctx: DecisionContext) -> float:
    return ctx.action_set_s[int(np.argmin(weighted_costs(ctx)))]


def pso_objective(ctx: DecisionContext, x: np.ndarray) -> np.ndarray:
    """Weighted cost over continuous keep-alives, p interpolated between grid points"""
    ks = np.asarray(ctx.action_set_s, dtype=np.float64)
    p = np.interp(x, ks, np.asarray(ctx.p_k, dtype=np.float64))
    c_cold = (1.0 - p) * ctx.l_cold_ms
    c_carbon = _idle_power_w(ctx) * x / JOULES_PER_KWH * ctx.ci_now
    return weighted_cost(ctx.lambda_carbon, ctx.sigma_l, ctx.sigma_c, c_cold, c_carbon)


def snap(action_set_s: Sequence[float], x: float) -> float:
    # Nearest action, ties to the smaller one
    ks = np.asarray(action_set_s, dtype=np.float64)
    return action_set_s[int(np.argmin(np.abs(ks - x)))]


def pso_policy(ctx: DecisionContext, swarm: int = 16, iters: int = 50, seed: int = 0) -> float:
    """Global-best particle swarm over [min k, max k], snapped to the action set"""
    if swarm < 2:
        raise PolicyError(f"PSO needs a swarm of at least 2 particles, got {swarm}")
    if iters < 1:
        raise PolicyError(f"PSO needs at least 1 iteration, got {iters}")

    lo, hi = float(ctx.action_set_s[0]), float(ctx.action_set_s[-1])
    if lo == hi:
        return ctx.action_set_s[0]

    rng = np.random.default_rng(seed)
    span = hi - lo

    positions = rng.uniform(lo, hi, swarm)
    velocities = rng.uniform(-span, span, swarm) * 0.1

    best_positions = positions.copy()
    best_values = pso_objective(ctx, positions)
    leader = int(np.argmin(best_values))
    global_best, global_value = best_positions[leader], best_values[leader]

    for _ in range(iters):
        r1 = rng.random(swarm)
        r2 = rng.random(swarm)

        velocities = (
            PSO_INERTIA * velocities
            + PSO_COGNITIVE * r1 * (best_positions - positions)
            + PSO_SOCIAL * r2 * (global_best - positions)
        )
        velocities = np.clip(velocities, -span, span)
        positions = np.clip(positions + velocities, lo, hi)

        values = pso_objective(ctx, positions)
        improved = values < best_values
        best_positions[improved] = positions[improved]
        best_values[improved] = values[improved]

        leader = int(np.argmin(best_values))
        if best_values[leader] < global_value:
            global_best, global_value = best_positions[leader], best_values[leader]

    return snap(ctx.action_set_s, float(global_best))


def oracle_costs(ctx: DecisionContext) -> np.ndarray:
    if ctx.next_gap_s is None:
        raise PolicyError("oracle policy needs the true next inter-reuse gap")

    gap = ctx.next_gap_s
    l_cold = ctx.next_cold_ms if ctx.next_cold_ms is not None else ctx.l_cold_ms
    ks = np.asarray(ctx.action_set_s, dtype=np.float64)

    cold = np.where(gap > ks, l_cold, 0.0)
    carbon = _idle_power_w(ctx) * np.minimum(gap, ks) / JOULES_PER_KWH * ctx.ci_now
    return weighted_cost(ctx.lambda_carbon, ctx.sigma_l, ctx.sigma_c, cold, carbon)


def oracle_policy(ctx: DecisionContext) -> float:
    """One-step optimum given the pod's true next arrival"""
    return ctx.action_set_s[int(np.argmin(oracle_costs(ctx)))]


@dataclass(frozen=True)
class _PlanNode:
    cost: float
    completion_ms: float
    parent: Optional["_PlanNode"]
    action_s: float


def _plan_pod(invocations: Sequence[Invocation], cfg: SimConfig) -> list[float]:
    """Cost-minimal keep-alive sequence for one pod

    Replays the engine's accounting for every choice, merging histories that
    reach the same completion time. With cold_delays_expiry off every history
    shares one completion time and the search is linear in the pod's length.
    """
    profile = cfg.profile
    timeline = cfg.timeline
    offset = cfg.offset_ms
    split = cfg.split_spans
    delay = cfg.cold_delays_expiry
    actions = tuple(float(k) for k in cfg.action_set_s)

    first = invocations[0]
    idle_w = profile.lambda_idle * active_power_w(profile, first.mem_mb, first.cpu_cores)

    def cost(cold_ms: float, idle_g: float) -> float:
        return weighted_cost(cfg.lambda_carbon, cfg.sigma_l, cfg.sigma_c, cold_ms, idle_g)

    first_completion = float(first.ts_ms) + first.exec_ms + (first.cold_ms if delay else 0.0)
    layer = {first_completion: _PlanNode(0.0, first_completion, None, 0.0)}

    for invocation in invocations[1:]:
        arrival = float(invocation.ts_ms)
        following: dict[float, _PlanNode] = {}

        for node in layer.values():
            gap_ms = arrival - node.completion_ms
            if gap_ms < 0:
                gap_ms = 0.0
            gap_s = gap_ms / 1000.0

            for k in actions:
                idle_s = min(gap_s, k)
                idle_g = integrate_carbon(timeline, idle_w, offset + node.completion_ms, idle_s, split)
                warm = arrival <= node.completion_ms + k * 1000.0
                cold_ms = 0.0 if warm else invocation.cold_ms

                completion = max(arrival, node.completion_ms) + invocation.exec_ms + (cold_ms if delay else 0.0)
                total = node.cost + cost(cold_ms, idle_g)

                best = following.get(completion)
                if best is None or total < best.cost:
                    following[completion] = _PlanNode(total, completion, node, k)

        layer = following

    # Last keep-alive of the pod runs out in full
    best_node, best_k, best_total = None, actions[0], math.inf
    for node in layer.values():
        for k in actions:
            residual_g = integrate_carbon(timeline, idle_w, offset + node.completion_ms, k, split)
            total = node.cost + cost(0.0, residual_g)
            if total < best_total:
                best_node, best_k, best_total = node, k, total

    plan = [best_k]
    node = best_node
    while node.parent is not None:
        plan.append(node.action_s)
        node = node.parent
    plan.reverse()

    return plan


def oracle_plan(trace: Sequence[Invocation], cfg: SimConfig) -> dict[str, list[float]]:
    """Per pod, the keep-alive sequence with the least total weighted cost on `trace`"""
    if not cfg.has_scales:
        sigma_l, sigma_c = unit_scales(trace, cfg)
        cfg = cfg.copy(update={"sigma_l": sigma_l, "sigma_c": sigma_c})

    by_pod: dict[str, list[Invocation]] = {}
    for invocation in trace:
        by_pod.setdefault(invocation.pod_id, []).append(invocation)

    return {pod_id: _plan_pod(invocations, cfg) for pod_id, invocations in by_pod.items()}


class OraclePolicy(KeepAlivePolicy):
    """Replays the optimal keep-alive sequence planned over the whole trace"""

    name = "oracle"
    requires_future = True

    def __init__(self):
        self._plan: dict[str, list[float]] = {}
        self._cursor: dict[str, int] = {}

    def reset(self, cfg: SimConfig) -> None:
        self._plan = {}
        self._cursor = {}

    def prepare(self, trace: Sequence[Invocation], cfg: SimConfig) -> None:
        self._plan = oracle_plan(trace, cfg)
        logger.debug(f"Oracle planned {len(self._plan)} pod(s)")

    def decide(self, ctx: DecisionContext) -> float:
        plan = self._plan.get(ctx.pod_id)
        position = self._cursor.get(ctx.pod_id, 0)
        if plan is None or position >= len(plan):
            raise PolicyError(f"oracle has no planned keep-alive for pod '{ctx.pod_id}', prepare it with the simulated trace")

        self._cursor[ctx.pod_id] = position + 1
        return plan[position]


class PsoPolicy(KeepAlivePolicy):
    name = "pso"

    def __init__(self, swarm: int = 16, iters: int = 50, seed: int = 0):
        if swarm < 2 or iters < 1:
            raise PolicyError(f"invalid PSO parameters: swarm={swarm} iters={iters}")
        self.swarm = swarm
        self.iters = iters
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def reset(self, cfg: SimConfig) -> None:
        self._rng = np.random.default_rng(self.seed)

    def decide(self, ctx: DecisionContext) -> float:
        return pso_policy(ctx, self.swarm, self.iters, int(self._rng.integers(2**63)))


class ScriptedPolicy(KeepAlivePolicy):
    """Replays a fixed keep-alive sequence per pod"""

    name = "scripted"

    def __init__(self, sequences: dict[str, Sequence[float]]):
        self.sequences = sequences
        self._cursor: dict[str, int] = {}

    def reset(self, cfg: SimConfig) -> None:
        self._cursor = {}

    def decide(self, ctx: DecisionContext) -> float:
        position = self._cursor.get(ctx.pod_id, 0)
        self._cursor[ctx.pod_id] = position + 1
        return self.sequences[ctx.pod_id][position]


def make_policy(name: PolicyName | str, k: float = 60.0, swarm: int = 16, iters: int = 50, seed: int = 0) -> KeepAlivePolicy:
    """Non-learned policies by name"""
    match PolicyName(name):
        case PolicyName.fixed:
            return fixed_policy(k)
        case PolicyName.latency_min:
            return FunctionPolicy("latency_min", latency_min)
        case PolicyName.carbon_min:
            return FunctionPolicy("carbon_min", carbon_min)
        case PolicyName.weighted_greedy:
            return FunctionPolicy("weighted_greedy", weighted_greedy)
        case PolicyName.pso:
            return PsoPolicy(swarm, iters, derive_seed(seed, "policy"))
        case PolicyName.oracle:
            return OraclePolicy()
    raise PolicyError(f"policy '{name}' needs a trained model")


def describe_policies() -> list[PolicyInfo]:
    return [
        PolicyInfo(name=PolicyName.fixed, parameters={"k": "keep-alive seconds, default 60"}, description="Constant keep-alive"),
        PolicyInfo(name=PolicyName.latency_min, parameters={}, description="Minimizes the expected cold-start penalty"),
        PolicyInfo(name=PolicyName.carbon_min, parameters={}, description="Always the shortest keep-alive"),
        PolicyInfo(name=PolicyName.weighted_greedy, parameters={}, description="One-step argmin of the weighted cost"),
        PolicyInfo(
            name=PolicyName.pso,
            parameters={"swarm": "particles, default 16", "iters": "iterations, default 50"},
            description="Particle swarm over the continuous keep-alive interval",
        ),
        PolicyInfo(name=PolicyName.oracle, parameters={}, description="Optimal keep-alive sequence planned over the whole trace"),
        PolicyInfo(
            name=PolicyName.rl,
            parameters={"model": "path to a trained model file"},
            description="Deep Q-network agent",
        ),
    ]


def unit_scales(invocations: Sequence[Invocation], cfg: SimConfig) -> tuple[float, float]:
    """sigma_l = 1 / mean cold latency; sigma_c = 1 / mean c_carbon at k=60 (or the largest k)"""
    if not invocations:
        raise DataError("cannot derive unit scales from an empty trace")

    sigma_l = cfg.sigma_l
    if sigma_l is None:
        if any(i.cold_ms is None for i in invocations):
            raise DataError("unit scales need cold-start annotated invocations")
        sigma_l = len(invocations) / math.fsum(i.cold_ms for i in invocations)

    sigma_c = cfg.sigma_c
    if sigma_c is None:
        k_ref = 60.0 if 60.0 in cfg.action_set_s else cfg.action_set_s[-1]
        offset = cfg.offset_ms
        mean_carbon = math.fsum(
            to_carbon(idle_energy(cfg.profile, i.mem_mb, i.cpu_cores, k_ref), ci_at(cfg.timeline, offset + i.ts_ms))
            for i in invocations
        ) / len(invocations)

        if mean_carbon > 0:
            sigma_c = 1.0 / mean_carbon
        else:
            logger.warning("Mean keep-alive carbon is zero on this trace, using sigma_c = 1")
            sigma_c = 1.0

    return sigma_l, sigma_c
