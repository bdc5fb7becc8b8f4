import itertools
import math
from typing import Sequence

from pydantic import BaseModel

from ..engine.controller import ensure_scales, run
from ..engine.model import SimConfig
from ..trace.model import Invocation
from .controller import ScriptedPolicy


class SearchResult(BaseModel):
    best_cost: float
    sequences: dict[str, list[float]]
    evaluated: int


def exhaustive_best_cost(
    trace: Sequence[Invocation], cfg: SimConfig, max_sequences: int = 200_000
) -> SearchResult:
    """Minimum total weighted cost over every keep-alive sequence

    Pods never interact in the engine, so each pod's invocations are searched
    on their own and the per-pod optima are summed.
    """
    cfg = ensure_scales(trace, cfg)
    actions = cfg.action_set_s

    by_pod: dict[str, list[Invocation]] = {}
    for invocation in trace:
        by_pod.setdefault(invocation.pod_id, []).append(invocation)

    budget = sum(len(actions) ** len(invocations) for invocations in by_pod.values())
    if budget > max_sequences:
        raise ValueError(f"exhaustive search would evaluate {budget} sequences, limit is {max_sequences}")

    costs = []
    best_sequences = {}
    for pod_id, invocations in sorted(by_pod.items()):
        best_cost, best_sequence = math.inf, None

        for sequence in itertools.product(actions, repeat=len(invocations)):
            report, _ = run(invocations, ScriptedPolicy({pod_id: sequence}), cfg, fingerprint=pod_id)
            if report.weighted_cost < best_cost:
                best_cost, best_sequence = report.weighted_cost, list(sequence)

        costs.append(best_cost)
        best_sequences[pod_id] = best_sequence

    return SearchResult(best_cost=math.fsum(costs), sequences=best_sequences, evaluated=budget)
