import hashlib
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

from domain.isa import opcodes

from .context import ContextFrame
from .coverage import probe_id
from .lockdep import AcquireContext
from .maps import MapInstance, RingBufMap
from .types import BugReport, Engine, ExecResult, HelperCall, MemoryFault, Oracle

if TYPE_CHECKING:
    from .kernel import LoadedProgram, SimKernel

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class TailCall:
    target: "LoadedProgram"


class Execution:
    """一次程序运行的可变状态：栈、辅助函数轨迹、发现、未释放的 ringbuf 记录。"""

    def __init__(
        self,
        kernel: "SimKernel",
        prog: "LoadedProgram",
        frame: ContextFrame,
        *,
        engine: Engine,
        cpu: int = 0,
        interrupt: bool = False,
        irqs_disabled: bool = False,
    ):
        self.kernel = kernel
        self.memory = kernel.memory
        self.prog = prog
        self.entry_id = prog.id
        self.frame = frame
        self.engine = engine
        self.cpu = cpu
        self.interrupt = interrupt
        self.irqs_disabled = irqs_disabled
        self.stack = kernel.memory.map("stack", "stack", opcodes.STACK_SIZE)
        self.trace: list[HelperCall] = []
        self.findings: list[BugReport] = []
        self._reported: set[tuple[str, str]] = set()
        self.hits: set[int] = set()
        self.outstanding: dict[int, RingBufMap] = {}
        self.tail_calls = 0
        self.insn_count = 0
        if interrupt:
            self.hit("exec:interrupt")

    @property
    def frame_pointer(self) -> int:
        return self.stack.end

    @property
    def ctx_address(self) -> int:
        return self.frame.address

    def hit(self, name: str) -> None:
        pid = probe_id(name)
        if pid is not None:
            self.hits.add(pid)

    def report(self, oracle: Oracle, location: str, detail: str = "") -> None:
        report = BugReport(oracle=oracle, location=location, detail=detail)
        if report.key in self._reported:
            return
        self._reported.add(report.key)
        logger.debug("prog %s: %s at %s %s", self.prog.id, oracle.value, location, detail)
        self.findings.append(report)

    def fault(self, fault: MemoryFault, location: str) -> None:
        oracle = Oracle.NULL_DEREF if fault.kind == "null" else Oracle.OOB_ACCESS
        self.hit("exec:fault")
        self.report(oracle, location, str(fault))

    def lock_context(self, irq_saving: bool) -> AcquireContext:
        if self.interrupt:
            return AcquireContext.INTERRUPT
        if irq_saving or self.irqs_disabled:
            return AcquireContext.IRQ_OFF
        return AcquireContext.TASK_IRQ_ON

    def map_at(self, address: int) -> MapInstance | None:
        return self.kernel.map_by_object.get(address)

    def call_helper(self, helper_id: int, args: list[int]) -> "int | TailCall":
        from .helpers import dispatch

        return dispatch(self, helper_id, args)

    def finish(self, return_value: int, *, aborted: bool = False, reason: str | None = None) -> ExecResult:
        if self.outstanding:
            self.report(
                Oracle.REF_LEAK_RUNTIME,
                "exit:ringbuf_record",
                f"{len(self.outstanding)} reserved ringbuf record(s) still held at exit",
            )
        else:
            self.hit("exec:exit")
        self.memory.unmap(self.stack)
        return ExecResult(
            return_value=return_value & opcodes.U64_MAX,
            helper_trace=self.trace,
            insn_count=self.insn_count,
            coverage_delta=sorted(self.hits),
            oracle_findings=self.findings,
            aborted=aborted,
            abort_reason=reason,
            prog_id=self.entry_id,
            engine=self.engine,
            interrupt=self.interrupt,
        )


def args_digest(args: list[int]) -> str:
    raw = b"".join((a & opcodes.U64_MAX).to_bytes(8, "little") for a in args)
    return hashlib.sha1(raw).hexdigest()[:16]
