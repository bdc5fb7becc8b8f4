from asyncer import asyncify
from config import get_settings
from fastapi import APIRouter, HTTPException

from . import controller
from .model import GeneratedTrace, SyntheticSpec

router = APIRouter(tags=["traces"])


@router.post("/traces/synthetic", response_model=GeneratedTrace)
async def post_synthetic_trace(spec: SyntheticSpec):
    generated = await asyncify(controller.generate_trace)(spec)

    limit = get_settings().MAX_TRACE_RECORDS
    if len(generated.invocations) > limit:
        raise HTTPException(
            status_code=400,
            detail=f"Too many invocations ({len(generated.invocations)}). Limit is {limit} per request.",
        )

    return generated
