import logging
from dataclasses import dataclass

from domain.astgen import ProgramAst
from domain.catalog import AttachKind, Catalog, CatalogService, MapSpecRequest, MapTypeId, ProgramTypeId
from domain.isa import RawProgram
from domain.lower import compile_ast, decode_container

from .kernel import SimKernel
from .types import Engine, ExecResult, SeededBug

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class PreparedProgram:
    prog_id: int
    handles: dict[int, int]
    prog_type: ProgramTypeId


class RuntimeService:
    @classmethod
    def kernel(
        cls,
        *,
        seed: int = 0,
        seeded_bugs: frozenset[SeededBug] = frozenset(),
        engine: Engine = Engine.INTERP,
        catalog: Catalog | None = None,
    ) -> SimKernel:
        return SimKernel(catalog=catalog or CatalogService.get(), seed=seed, seeded_bugs=seeded_bugs, engine=engine)

    @classmethod
    def create_maps(cls, kernel: SimKernel, map_deps: list[MapSpecRequest]) -> dict[int, int]:
        return {ordinal: kernel.sys_map_create(spec) for ordinal, spec in enumerate(map_deps)}

    @classmethod
    def populate(cls, kernel: SimKernel, prog_type: ProgramTypeId, handles: dict[int, int]) -> None:
        """给 PROG_ARRAY 填同类型的桩程序，打开 PERF_EVENT_ARRAY 的全部槽位。"""
        for map_id in handles.values():
            spec = kernel.maps[map_id].spec
            if spec.map_type is MapTypeId.PROG_ARRAY:
                for index in range(spec.max_entries):
                    kernel.prog_array_update(map_id, index, kernel.load_stub(prog_type, index + 1))
            elif spec.map_type is MapTypeId.PERF_EVENT_ARRAY:
                for index in range(spec.max_entries):
                    kernel.perf_event_set(map_id, index)

    @classmethod
    def prepare(
        cls,
        kernel: SimKernel,
        source: ProgramAst | RawProgram | bytes,
        map_deps: list[MapSpecRequest] | None = None,
        *,
        populate: bool = True,
    ) -> PreparedProgram:
        """建 map、加载（含校验）并按需填充尾调用与 perf 槽位。"""
        if isinstance(source, ProgramAst):
            map_deps = source.map_deps
            prog = compile_ast(source, kernel.catalog)
        elif isinstance(source, bytes):
            prog, map_deps = decode_container(source)
        else:
            prog = source
        handles = cls.create_maps(kernel, map_deps or [])
        prog_id = kernel.sys_prog_load(prog, handles)
        prog_type = ProgramTypeId(prog.prog_type)
        if populate:
            cls.populate(kernel, prog_type, handles)
        return PreparedProgram(prog_id, handles, prog_type)

    @classmethod
    def run(
        cls,
        source: ProgramAst | RawProgram | bytes,
        payload: bytes = b"",
        *,
        engine: Engine = Engine.INTERP,
        seeded_bugs: frozenset[SeededBug] = frozenset(),
        seed: int = 0,
        interrupt: bool = False,
        catalog: Catalog | None = None,
    ) -> ExecResult:
        """在新内核里运行一次：能 TEST_RUN 的直接跑，其余挂载后触发事件。"""
        kernel = cls.kernel(seed=seed, seeded_bugs=seeded_bugs, engine=engine, catalog=catalog)
        prepared = cls.prepare(kernel, source)
        spec = kernel.catalog.program(prepared.prog_type)
        if spec.test_runnable:
            return kernel.sys_test_run(prepared.prog_id, payload)
        target = kernel.sys_target_create(spec.attach_kind) if spec.attach_kind.needs_target else None
        kernel.sys_prog_attach(prepared.prog_id, spec.attach_kind, target)
        results = kernel.trigger_event(spec.attach_kind, payload, interrupt=interrupt and spec.attach_kind is AttachKind.TRACE_EVENT)
        return results[0]
