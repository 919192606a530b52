from typing import Optional

from pydantic import BaseModel, Field, field_validator


class LabSettings(BaseModel):
    catalog: Optional[str] = None
    seed: int = 0
    workers: int = Field(default=1, ge=1)
    seed_bugs: str = "none"
    corpus_dir: str = "data/corpus"
    log_level: str = "INFO"
    task_concurrency: int = Field(default=1, ge=1)

    @field_validator("log_level")
    @classmethod
    def _upper(cls, value: str) -> str:
        return value.upper()
