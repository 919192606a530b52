from .service import TaskService
from .task_queue import Task, TaskProgress, TaskStatus, task_queue_service
from .types import TaskQueueSettings, TaskQueueSettingsResponse

__all__ = [
    "TaskService",
    "Task",
    "TaskProgress",
    "TaskStatus",
    "task_queue_service",
    "TaskQueueSettings",
    "TaskQueueSettingsResponse",
]
