from dataclasses import asdict

from fastapi import APIRouter
from pydantic import BaseModel, Field

from api.response import success
from domain.tasks import task_queue_service
from .service import FuzzService
from .types import FuzzConfig

router = APIRouter(prefix="/api/fuzz", tags=["fuzz"])


class ReplayRequest(BaseModel):
    input: dict
    seed_bugs: str | None = None
    kernel_seed: int | None = Field(default=None, ge=0)


@router.post("/sessions")
async def create_session(cfg: FuzzConfig):
    task = await task_queue_service.add_task("fuzz_session", cfg.model_dump(mode="json"))
    return success({"task_id": task.id}, msg="queued")


@router.post("/replay")
async def replay(req: ReplayRequest):
    outcome = FuzzService.replay(req.input, seed_bugs=req.seed_bugs, kernel_seed=req.kernel_seed)
    return success(
        {
            "loaded": outcome.loaded,
            "attached": outcome.attached,
            "executed": outcome.executed,
            "rule_id": outcome.rule_id,
            "bugs": [bug.model_dump(mode="json") for bug in outcome.bugs],
            "calls": [asdict(record) for record in outcome.call_log],
        }
    )
