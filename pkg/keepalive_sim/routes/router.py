from fastapi import APIRouter

from .carbon.endpoint import router as carbon_router
from .experiments.endpoint import router as experiments_router
from .policies.endpoint import router as policies_router
from .trace.endpoint import router as trace_router

central_router = APIRouter()

central_router.include_router(carbon_router)
central_router.include_router(experiments_router)
central_router.include_router(policies_router)
central_router.include_router(trace_router)
