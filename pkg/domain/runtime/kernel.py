import copy
import logging
import random
from collections import Counter
from collections.abc import Mapping
from dataclasses import dataclass, field

from domain.catalog import AttachKind, Catalog, CatalogService, MapSpecRequest, ProgramTypeId
from domain.isa import BytecodeError, Instruction, RawProgram
from domain.lower import LoadError, decode_container, relocate, section_name
from domain.verifier import VerifierError, VerifierService, VerifierSummary, from_bytecode_error

from .context import build_context
from .coverage import CoverageMap
from .execution import Execution
from .interpreter import run_interpreter
from .linear import run_linear
from .lockdep import RUNQUEUE_LOCK, AcquireContext, LockContextTracker, lockdep_check
from .maps import (
    MapInstance,
    PerfEventArrayMap,
    ProgArrayMap,
    QueueMap,
    RingBufMap,
    create_map,
)
from .memory import AddressSpace
from .types import NR_CPUS, BugReport, Engine, ExecResult, Oracle, SeededBug, SyscallError

logger = logging.getLogger(__name__)

ARENA_SIZE = 4096


@dataclass(slots=True)
class LoadedProgram:
    id: int
    prog_type: ProgramTypeId
    image: RawProgram
    summary: VerifierSummary


@dataclass(slots=True)
class Attachment:
    prog_id: int
    target: int | None = None


@dataclass
class LoadStats:
    loads_attempted: int = 0
    loads_succeeded: int = 0
    attaches_attempted: int = 0
    attaches_succeeded: int = 0
    rejections: Counter = field(default_factory=Counter)


class SimKernel:
    """模拟内核：map、程序、挂载点与执行入口。每个 worker 独占一个实例。"""

    def __init__(
        self,
        *,
        catalog: Catalog | None = None,
        seed: int = 0,
        seeded_bugs: frozenset[SeededBug] = frozenset(),
        engine: Engine = Engine.INTERP,
        worker: int = 0,
    ):
        self.catalog = catalog or CatalogService.get()
        self.seed = seed
        self.rng = random.Random(seed)
        self.seeded_bugs = frozenset(seeded_bugs)
        self.engine = Engine(engine)
        self.memory = AddressSpace()
        self.maps: dict[int, MapInstance] = {}
        self.map_by_object: dict[int, MapInstance] = {}
        self.programs: dict[int, LoadedProgram] = {}
        self.attach_points: dict[AttachKind, list[Attachment]] = {kind: [] for kind in AttachKind}
        self.targets: dict[int, AttachKind] = {}
        self.kernel_arena = self.memory.map("kernel_arena", "arena", ARENA_SIZE, data=self.rng.randbytes(ARENA_SIZE), writable=False)
        self.user_arena = self.memory.map("user_arena", "arena", ARENA_SIZE, data=self.rng.randbytes(ARENA_SIZE), writable=False)
        self.socket = self.memory.map("socket", "socket", 64, writable=False)
        self.clock = 0
        self.pid_tgid = ((4096 + worker) << 32) | (4096 + worker)
        self.locks = LockContextTracker()
        self.coverage = CoverageMap()
        self.load_stats = LoadStats()
        self.predecoded: dict[int, list] = {}
        self._next_map = 1
        self._next_prog = 1
        self._next_target = 1
        self._cpu_cursor = 0

    # -- map 相关

    def sys_map_create(self, spec: MapSpecRequest) -> int:
        problem = self.catalog.check_map_spec(spec)
        if problem is not None:
            raise SyscallError("attr_invalid", f"{spec.map_type.name}: invalid {problem}")
        map_id = self._next_map
        self._next_map += 1
        instance = create_map(
            map_id, spec, self.memory, irq_unsafe_queue=SeededBug.QUEUE_LOCK_CTX in self.seeded_bugs
        )
        self.maps[map_id] = instance
        self.map_by_object[instance.object.base] = instance
        return map_id

    def _map(self, map_id: int, kind: type[MapInstance] = MapInstance) -> MapInstance:
        m = self.maps.get(map_id)
        if m is None:
            raise SyscallError("no_such_map", f"map {map_id} does not exist")
        if not isinstance(m, kind):
            raise SyscallError("attr_invalid", f"map {map_id} ({m.spec.map_type.name}) does not support this operation")
        return m

    def map_update(self, map_id: int, key: bytes, value: bytes, flags: int = 0) -> int:
        return self._map(map_id).update(None, key, value, flags)

    def map_lookup(self, map_id: int, key: bytes) -> bytes | None:
        return self._map(map_id).user_lookup(key)

    def map_delete(self, map_id: int, key: bytes) -> int:
        return self._map(map_id).delete(None, key)

    def map_push(self, map_id: int, value: bytes, flags: int = 0) -> int:
        return self._map(map_id, QueueMap).push(None, value, flags)

    def map_pop(self, map_id: int) -> bytes | None:
        value = self._map(map_id, QueueMap).pop(None)
        return None if isinstance(value, int) else value

    def ringbuf_consume(self, map_id: int) -> list[bytes]:
        return self._map(map_id, RingBufMap).consume()

    def prog_array_update(self, map_id: int, index: int, prog_id: int) -> None:
        m = self._map(map_id, ProgArrayMap)
        if not 0 <= index < m.spec.max_entries:
            raise SyscallError("attr_invalid", f"index {index} outside {m.spec.max_entries} slots")
        prog = self.programs.get(prog_id)
        if prog is None:
            raise SyscallError("no_such_prog", f"program {prog_id} is not loaded")
        owner = self._prog_array_owner(m)
        if owner is not None and owner != prog.prog_type:
            raise SyscallError("prog_type_mismatch", f"map holds {owner.name} programs, got {prog.prog_type.name}")
        m.set_prog(index, prog_id)

    def _prog_array_owner(self, m: ProgArrayMap) -> ProgramTypeId | None:
        for index in range(m.spec.max_entries):
            prog = self.programs.get(m.get_prog(index))
            if prog is not None:
                return prog.prog_type
        return None

    def perf_event_set(self, map_id: int, index: int) -> None:
        m = self._map(map_id, PerfEventArrayMap)
        if not 0 <= index < m.spec.max_entries:
            raise SyscallError("attr_invalid", f"index {index} outside {m.spec.max_entries} slots")
        m.enabled[index] = True

    # -- 程序相关

    def sys_prog_load(self, source: RawProgram | bytes, handles: Mapping[int, int] | None = None) -> int:
        """解码、重定位、校验；成功返回新的程序 id。"""
        self.load_stats.loads_attempted += 1
        handles = dict(handles or {})
        try:
            prog = decode_container(source)[0] if isinstance(source, bytes) else source
            for map_id in handles.values():
                self._map(map_id)
            image = relocate(prog, handles)
            table = {map_id: self.maps[map_id].spec for map_id in set(handles.values())}
            summary = VerifierService.verify(image, table, catalog=self.catalog)
        except BytecodeError as exc:
            error = from_bytecode_error(exc)
            self.load_stats.rejections[error.rule_id] += 1
            raise error from None
        except LoadError as exc:
            self.load_stats.rejections[exc.rule_id] += 1
            raise
        except VerifierError as exc:
            self.load_stats.rejections[exc.rule_id] += 1
            raise
        prog_id = self._next_prog
        self._next_prog += 1
        self.programs[prog_id] = LoadedProgram(prog_id, ProgramTypeId(image.prog_type), image, summary)
        self.load_stats.loads_succeeded += 1
        return prog_id

    def load_stub(self, prog_type: ProgramTypeId, value: int) -> int:
        """`r0 = K; exit`，给 PROG_ARRAY 填槽用。"""
        insns = [Instruction.mov64_imm(0, value), Instruction.exit()]
        return self.sys_prog_load(RawProgram(int(prog_type), section_name(prog_type, self.catalog), insns))

    def sys_target_create(self, kind: AttachKind) -> int:
        target = self._next_target
        self._next_target += 1
        self.targets[target] = AttachKind(kind)
        return target

    def sys_prog_attach(self, prog_id: int, kind: AttachKind, target: int | None = None) -> None:
        self.load_stats.attaches_attempted += 1
        prog = self._prog(prog_id)
        kind = AttachKind(kind)
        expected = self.catalog.program(prog.prog_type).attach_kind
        if kind is not expected:
            raise SyscallError("attach_type_mismatch", f"{prog.prog_type.name} attaches to {expected.value}, not {kind.value}")
        if kind.needs_target:
            if target is None:
                raise SyscallError("attach_target_missing", f"{kind.value} attachment needs a target")
            if self.targets.get(target) is not kind:
                raise SyscallError("no_such_target", f"target {target} is not a {kind.value} resource")
        self.attach_points[kind].append(Attachment(prog_id, target))
        self.load_stats.attaches_succeeded += 1

    def _prog(self, prog_id: int) -> LoadedProgram:
        prog = self.programs.get(prog_id)
        if prog is None:
            raise SyscallError("no_such_prog", f"program {prog_id} is not loaded")
        return prog

    # -- 执行

    def next_cpu(self) -> int:
        cpu = self._cpu_cursor
        self._cpu_cursor = (self._cpu_cursor + 1) % NR_CPUS
        return cpu

    def sys_test_run(self, prog_id: int, payload: bytes = b"") -> ExecResult:
        prog = self._prog(prog_id)
        if not self.catalog.program(prog.prog_type).test_runnable:
            raise SyscallError("test_run_unsupported", f"{prog.prog_type.name} programs cannot be test-run")
        return self.execute(prog, payload)

    def trigger_event(self, kind: AttachKind, payload: bytes = b"", *, interrupt: bool = False) -> list[ExecResult]:
        kind = AttachKind(kind)
        results = []
        if kind is AttachKind.TRACE_EVENT and interrupt:
            # 时钟中断进入调度器，在中断上下文里拿运行队列锁
            with self.locks.hold(RUNQUEUE_LOCK, AcquireContext.INTERRUPT):
                pass
        for attachment in list(self.attach_points[kind]):
            prog = self.programs[attachment.prog_id]
            spec = self.catalog.program(prog.prog_type)
            in_interrupt = interrupt and spec.interrupt_capable
            if prog.prog_type is ProgramTypeId.TRACEPOINT and not in_interrupt:
                # sched_switch 在关中断并持有运行队列锁时触发
                with self.locks.hold(RUNQUEUE_LOCK, AcquireContext.IRQ_OFF):
                    results.append(self.execute(prog, payload, irqs_disabled=True))
            else:
                results.append(self.execute(prog, payload, interrupt=in_interrupt))
        return results

    def _run(self, prog: LoadedProgram, payload: bytes, engine: Engine, cpu: int, *, interrupt: bool, irqs_disabled: bool) -> ExecResult:
        frame = build_context(self, prog.prog_type, payload)
        ex = Execution(self, prog, frame, engine=engine, cpu=cpu, interrupt=interrupt, irqs_disabled=irqs_disabled)
        ex.hit("ctx:build")
        try:
            return run_interpreter(ex) if engine is Engine.INTERP else run_linear(ex)
        finally:
            self.memory.unmap(frame.region)

    def snapshot(self) -> "SimKernel":
        # 目录只读，快照之间共享
        return copy.deepcopy(self, memo={id(self.catalog): self.catalog})

    def execute(
        self,
        prog: LoadedProgram | int,
        payload: bytes = b"",
        *,
        interrupt: bool = False,
        irqs_disabled: bool = False,
    ) -> ExecResult:
        if isinstance(prog, int):
            prog = self._prog(prog)
        cpu = self.next_cpu()
        if self.engine is Engine.BOTH:
            shadow = self.snapshot()
            result = self._run(prog, payload, Engine.INTERP, cpu, interrupt=interrupt, irqs_disabled=irqs_disabled)
            other = shadow._run(prog, payload, Engine.LINEAR, cpu, interrupt=interrupt, irqs_disabled=irqs_disabled)
            for report in diff_results(result, other, self.map_digest(), shadow.map_digest()):
                if report.key not in {f.key for f in result.oracle_findings}:
                    result.oracle_findings.append(report)
            result.engine = Engine.BOTH
        else:
            result = self._run(prog, payload, self.engine, cpu, interrupt=interrupt, irqs_disabled=irqs_disabled)
        seen = {f.key for f in result.oracle_findings}
        result.oracle_findings.extend(r for r in lockdep_check(self.locks) if r.key not in seen)
        self.coverage.hit(result.coverage_delta)
        return result

    def map_digest(self) -> dict[int, str]:
        return {map_id: m.digest() for map_id, m in sorted(self.maps.items())}

    def lockdep_check(self) -> list[BugReport]:
        return lockdep_check(self.locks)


def diff_results(a: ExecResult, b: ExecResult, maps_a: dict[int, str], maps_b: dict[int, str]) -> list[BugReport]:
    """两个引擎的可观测结果比较；每类差异一条报告。"""
    reports = []
    if a.return_value != b.return_value:
        reports.append(
            BugReport(
                oracle=Oracle.EXEC_DIVERGENCE,
                location="engine:return",
                detail=f"interp returned {a.return_value:#x}, linear returned {b.return_value:#x}",
            )
        )
    if a.observables()[1] != b.observables()[1]:
        reports.append(BugReport(oracle=Oracle.EXEC_DIVERGENCE, location="engine:trace", detail="helper traces differ"))
    if maps_a != maps_b:
        changed = sorted(k for k in maps_a if maps_a.get(k) != maps_b.get(k))
        reports.append(
            BugReport(oracle=Oracle.EXEC_DIVERGENCE, location="engine:maps", detail=f"map state differs for maps {changed}")
        )
    return reports
