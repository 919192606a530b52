from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field

from api.response import success
from domain.catalog import CatalogService, ProgramTypeId
from domain.isa import disassemble
from domain.lower import compile_ast
from domain.verifier import VerifierService
from .service import AstgenService
from .types import GenConfig

router = APIRouter(prefix="/api/programs", tags=["programs"])


class GenerateRequest(BaseModel):
    seed: int = Field(default=0, ge=0)
    prog_type: str | None = None
    config: GenConfig = Field(default_factory=GenConfig)


class VerifyRequest(BaseModel):
    ast: str


@router.post("/generate")
async def generate(req: GenerateRequest):
    catalog = CatalogService.get()
    pt = None
    if req.prog_type:
        if req.prog_type.upper() not in ProgramTypeId.__members__:
            raise HTTPException(status_code=400, detail=f"unknown program type: {req.prog_type}")
        pt = ProgramTypeId[req.prog_type.upper()]
    ast = AstgenService.generate(req.seed, pt, cfg=req.config, catalog=catalog)
    prog = compile_ast(ast, catalog)
    return success({
        "prog_type": ast.prog_type.name,
        "ast": AstgenService.render(ast),
        "disassembly": disassemble(prog, catalog.helper_names),
        "insns": len(prog.insns),
    })


@router.post("/verify")
async def verify(req: VerifyRequest):
    catalog = CatalogService.get()
    ast = AstgenService.parse(req.ast)
    prog = compile_ast(ast, catalog)
    summary = VerifierService.verify(prog, ast.map_deps, catalog=catalog)
    return success(summary.model_dump())
