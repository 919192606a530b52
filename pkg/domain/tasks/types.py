from pydantic import BaseModel, Field


class TaskQueueSettings(BaseModel):
    concurrency: int = Field(..., ge=1, description="Desired number of concurrent fuzz sessions")


class TaskQueueSettingsResponse(TaskQueueSettings):
    active_workers: int = Field(..., ge=0, description="Currently running worker count")
