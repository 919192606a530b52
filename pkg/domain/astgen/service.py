import logging
import random

from domain.catalog import Catalog, CatalogService, ProgramTypeId

from .generator import generate_program
from .mutator import mutate_program
from .serializer import deserialize_ast, serialize_ast
from .types import GenConfig, ProgramAst

logger = logging.getLogger(__name__)


class AstgenService:
    """生成与变异的入口，按需取共享目录。"""

    @classmethod
    def generate(
        cls,
        seed: int = 0,
        prog_type: ProgramTypeId | None = None,
        *,
        cfg: GenConfig | None = None,
        catalog: Catalog | None = None,
    ) -> ProgramAst:
        cfg = (cfg or GenConfig()).model_copy(update={"seed": seed})
        ast = generate_program(cfg, prog_type, catalog=catalog or CatalogService.get())
        logger.debug("generated %s program with %d helper calls", ast.prog_type.name, len(ast.helper_calls()))
        return ast

    @classmethod
    def generate_many(
        cls,
        count: int,
        seed: int = 0,
        prog_type: ProgramTypeId | None = None,
        *,
        cfg: GenConfig | None = None,
        catalog: Catalog | None = None,
    ) -> list[ProgramAst]:
        cfg = cfg or GenConfig()
        rng = random.Random(seed)
        catalog = catalog or CatalogService.get()
        return [generate_program(cfg, prog_type, catalog=catalog, rng=rng) for _ in range(count)]

    @classmethod
    def mutate(cls, ast: ProgramAst, rng: random.Random, *, catalog: Catalog | None = None) -> ProgramAst:
        return mutate_program(ast, rng, catalog=catalog or CatalogService.get())

    @classmethod
    def parse(cls, text: str) -> ProgramAst:
        return deserialize_ast(text)

    @classmethod
    def render(cls, ast: ProgramAst) -> str:
        return serialize_ast(ast)
