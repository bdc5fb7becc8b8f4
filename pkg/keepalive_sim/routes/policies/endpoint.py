from fastapi import APIRouter

from . import controller
from .model import PolicyInfo

router = APIRouter(tags=["policies"])


@router.get("/policies", response_model=list[PolicyInfo])
async def get_policies():
    return controller.describe_policies()
