from asyncer import asyncify
from config import get_settings
from fastapi import APIRouter, HTTPException

from ..metrics.model import SimReport
from . import controller
from .model import ComparisonRequest, ComparisonResult, RunConfig, SimulationRequest

router = APIRouter(tags=["experiments"])


def _run_config(request: SimulationRequest) -> RunConfig:
    return RunConfig(trace=request.trace, carbon=request.carbon, sim=request.sim, policy=request.policy)


def _check_size(request: SimulationRequest) -> None:
    limit = get_settings().MAX_TRACE_RECORDS
    if request.invocations is not None and len(request.invocations) > limit:
        raise HTTPException(
            status_code=400,
            detail=f"Too many invocations. Limit is {limit} per request.",
        )
    if request.invocations is None and request.trace.synthetic is None:
        raise HTTPException(
            status_code=400,
            detail="Provide either inline invocations or a synthetic trace spec.",
        )
    if request.trace.path or request.trace.cold_log or request.carbon.timeline or request.carbon.profiles_file:
        raise HTTPException(
            status_code=400,
            detail="Server-side file paths are not accepted over HTTP.",
        )


def _simulate(request: SimulationRequest) -> SimReport:
    cfg = _run_config(request)
    workload = controller.prepare_workload(cfg, request.invocations, request.cold_logs)
    report, _ = controller.simulate(cfg, workload)
    return report


def _compare(request: ComparisonRequest) -> ComparisonResult:
    cfg = _run_config(request)
    names = controller.parse_policies(request.policies)
    workload = controller.prepare_workload(cfg, request.invocations, request.cold_logs)
    return controller.compare_policies(cfg, names, workload)


@router.post("/simulations", response_model=SimReport)
async def post_simulation(request: SimulationRequest):
    """
    # Usage:
    ### * Simulate one policy on inline invocations or a synthetic trace

    Model based policies (`rl`) are not available over HTTP, train and
    evaluate them from the command line.
    """
    _check_size(request)
    if request.policy.model:
        raise HTTPException(status_code=400, detail="Model files are not accepted over HTTP.")
    return await asyncify(_simulate)(request)


@router.post("/comparisons", response_model=ComparisonResult)
async def post_comparison(request: ComparisonRequest):
    """
    # Usage:
    ### * Compare several policies on the same trace slice

    Rows are ranked by distance to the origin of the (cold increase %,
    keep-alive carbon increase %) plane.
    """
    _check_size(request)
    if request.policy.model:
        raise HTTPException(status_code=400, detail="Model files are not accepted over HTTP.")
    return await asyncify(_compare)(request)
