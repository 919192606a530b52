from fastapi import APIRouter
from pydantic import BaseModel, Field, field_validator

from api.response import success
from domain.astgen import AstgenService
from .service import RuntimeService
from .types import Engine, parse_seeded_bugs

router = APIRouter(prefix="/api/runtime", tags=["runtime"])


class RunRequest(BaseModel):
    ast: str
    payload_hex: str = ""
    engine: Engine = Engine.INTERP
    seed_bugs: str = "none"
    seed: int = Field(default=0, ge=0)
    interrupt: bool = False

    @field_validator("seed_bugs")
    @classmethod
    def _check_bugs(cls, value: str) -> str:
        parse_seeded_bugs(value)
        return value


@router.post("/run")
async def run_program(req: RunRequest):
    ast = AstgenService.parse(req.ast)
    result = RuntimeService.run(
        ast,
        bytes.fromhex(req.payload_hex),
        engine=req.engine,
        seeded_bugs=parse_seeded_bugs(req.seed_bugs),
        seed=req.seed,
        interrupt=req.interrupt,
    )
    return success(result.model_dump(mode="json"))
