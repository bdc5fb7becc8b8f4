import logging
from typing import Callable, Iterable, Sequence

from util.exception import UsageError

from ..carbon.model import EnergyProfile
from ..engine.controller import run
from ..engine.model import SimConfig
from ..policies.model import KeepAlivePolicy
from ..trace.controller import fingerprint
from ..trace.model import Invocation
from .controller import dedupe_lambdas
from .model import SimReport, SweepRow

logger = logging.getLogger(__name__)

PolicyFor = Callable[[float], KeepAlivePolicy]


def _row(parameter: str, value: float, report: SimReport) -> SweepRow:
    return SweepRow(
        parameter=parameter,
        value=value,
        policy=report.policy,
        cold_start_count=report.cold_start_count,
        keep_alive_carbon_g=report.keep_alive_carbon_g,
        total_carbon_g=report.total_carbon_g,
        mean_e2e_latency_s=report.mean_e2e_latency_s,
        weighted_cost=report.weighted_cost,
    )


def sensitivity_sweep(
    policy_for: PolicyFor, trace: Sequence[Invocation], cfg: SimConfig, grid: Iterable[float]
) -> list[SweepRow]:
    """One evaluation run per lambda_carbon, `policy_for(lambda)` supplies the policy
    (a per-lambda trained model, or the same rule re-parameterized)."""
    lambdas = dedupe_lambdas(grid)
    if not lambdas:
        raise UsageError("lambda grid is empty")
    if any(not 0 <= lam <= 1 for lam in lambdas):
        raise UsageError(f"lambda_carbon values must lie in [0, 1], got {lambdas}")
    trace_id = fingerprint(trace)

    rows = []
    for lam in lambdas:
        report, _ = run(trace, policy_for(lam), cfg.with_lambda(lam), trace_id)
        logger.info(f"lambda_carbon={lam:g}: {report.cold_start_count} cold, {report.keep_alive_carbon_g:.6g} g keep-alive")
        rows.append(_row("lambda_carbon", lam, report))

    return rows


def lambda_idle_sweep(
    policy_for: PolicyFor, trace: Sequence[Invocation], cfg: SimConfig, grid: Iterable[float]
) -> list[SweepRow]:
    """Sensitivity to the idle power fraction, everything else held fixed"""
    values = dedupe_lambdas(grid)
    if not values:
        raise UsageError("lambda_idle grid is empty")
    if any(not 0 < value <= 1 for value in values):
        raise UsageError(f"lambda_idle values must lie in (0, 1], got {values}")
    trace_id = fingerprint(trace)

    rows = []
    for value in values:
        profile = EnergyProfile(**{**cfg.profile.dict(), "lambda_idle": value})
        report, _ = run(trace, policy_for(cfg.lambda_carbon), cfg.copy(update={"profile": profile}), trace_id)
        logger.info(f"lambda_idle={value:g}: {report.cold_start_count} cold, {report.keep_alive_carbon_g:.6g} g keep-alive")
        rows.append(_row("lambda_idle", value, report))

    return rows
