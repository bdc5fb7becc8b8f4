from fastapi import APIRouter

from ..experiments.model import ProfileList
from . import controller

router = APIRouter(tags=["carbon"])


@router.get("/profiles", response_model=ProfileList)
async def get_profiles():
    profiles = controller.load_profiles()
    return ProfileList(profiles=[profiles[name] for name in sorted(profiles)])
