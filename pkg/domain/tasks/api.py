from fastapi import APIRouter

from api.response import success
from .service import TaskService
from .types import TaskQueueSettings

router = APIRouter(
    prefix="/api/tasks",
    tags=["Tasks"],
    responses={404: {"description": "Not found"}},
)


@router.get("/queue")
async def get_task_queue_status():
    return success(TaskService.get_queue_tasks())


@router.get("/queue/settings")
async def get_task_queue_settings():
    return success(TaskService.get_queue_settings().model_dump())


@router.post("/queue/settings")
async def update_task_queue_settings(settings: TaskQueueSettings):
    payload = await TaskService.update_queue_settings(settings)
    return success(payload.model_dump())


@router.get("/queue/{task_id}")
async def get_task_status(task_id: str):
    return success(TaskService.get_queue_task(task_id))
