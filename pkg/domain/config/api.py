from fastapi import APIRouter

from api.response import success
from .service import ConfigService, VERSION

router = APIRouter(prefix="/api/config", tags=["config"])


@router.get("/")
async def get_config():
    return success({"version": VERSION, "settings": ConfigService.settings().model_dump()})
