import logging
from pathlib import Path

from domain.astgen import ProgramAst
from domain.catalog import Catalog, MapSpecRequest
from domain.isa import RawProgram

from .compiler import compile_ast
from .loader import decode_container, encode_container

logger = logging.getLogger(__name__)


class LowerService:
    @classmethod
    def compile(cls, ast: ProgramAst, *, catalog: Catalog | None = None) -> RawProgram:
        return compile_ast(ast, catalog)

    @classmethod
    def build_container(cls, ast: ProgramAst, *, catalog: Catalog | None = None) -> bytes:
        return encode_container(compile_ast(ast, catalog), ast.map_deps)

    @classmethod
    def write_container(cls, path: str | Path, prog: RawProgram, map_deps: list[MapSpecRequest]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_container(prog, map_deps))
        logger.debug("wrote %s (%d insns, %d maps)", path, len(prog.insns), len(map_deps))
        return path

    @classmethod
    def read_container(cls, path: str | Path) -> tuple[RawProgram, list[MapSpecRequest]]:
        return decode_container(Path(path).read_bytes())
