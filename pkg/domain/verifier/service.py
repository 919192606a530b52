import logging
from collections.abc import Callable, Mapping, Sequence

from domain.catalog import Catalog, CatalogService, MapSpecRequest, ProgramTypeId
from domain.catalog import VerifierValueType as V
from domain.isa import BytecodeError, RawProgram, SlotMap
from domain.isa import opcodes as op

from .alu import step_alu
from .branch import step_branch
from .calls import check_helper_call, finalize
from .cfg import check_cfg
from .memory import step_ld_imm64, step_mem
from .types import (
    ErrorCategory,
    RegState,
    RuleHistogram,
    VerifierEnv,
    VerifierError,
    VerifierState,
    VerifierSummary,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_STATES = 10_000

MapTable = Sequence[MapSpecRequest] | Mapping[int, MapSpecRequest]
StateObserver = Callable[[int, VerifierState], None]


def initial_state() -> VerifierState:
    state = VerifierState(regs=[RegState() for _ in range(op.REG_COUNT)])
    state.regs[1] = RegState.pointer(V.PTR_TO_CTX, id=state.fresh_id())
    state.regs[op.FRAME_REG] = RegState.pointer(V.PTR_TO_STACK, id=state.fresh_id())
    return state


def verify(
    prog: RawProgram,
    maps: MapTable = (),
    pt: ProgramTypeId | int | None = None,
    *,
    catalog: Catalog | None = None,
    max_states: int = DEFAULT_MAX_STATES,
    observer: StateObserver | None = None,
) -> VerifierSummary:
    """路径敏感的抽象解释。

    maps 以 ld_imm64 中的 map 引用为键：未重定位的程序传按序号排列的列表，
    已重定位的程序传 {运行时 map id: spec}。失败时抛出 VerifierError。
    observer 在每条指令处理前收到 (下标, 当前状态)，状态随后会被原地修改。
    """
    check_cfg(prog)
    catalog = catalog or CatalogService.get()
    table = dict(maps) if isinstance(maps, Mapping) else dict(enumerate(maps))
    env = VerifierEnv(catalog, ProgramTypeId(prog.prog_type if pt is None else pt), table)
    slots = SlotMap(prog.insns)
    insns = prog.insns

    worklist: list[tuple[int, VerifierState]] = [(0, initial_state())]
    paths = 1
    processed = 0
    max_depth = 0
    while worklist:
        index, state = worklist.pop()
        while True:
            processed += 1
            if observer is not None:
                observer(index, state)
            insn = insns[index]
            cls = insn.cls
            if cls in (op.BPF_ALU, op.BPF_ALU64):
                step_alu(state, insn, index)
                index += 1
            elif insn.opcode == op.LD_IMM64:
                step_ld_imm64(state, insn, index, env)
                index += 1
            elif cls in (op.BPF_LD, op.BPF_LDX, op.BPF_ST, op.BPF_STX):
                step_mem(state, insn, index, env)
                index += 1
            elif insn.opcode == op.JA:
                index = slots.target(index, insn.offset)
            elif insn.opcode == op.CALL:
                check_helper_call(state, insn, index, env)
                index += 1
            elif insn.opcode == op.EXIT:
                finalize(state, index)
                max_depth = max(max_depth, state.stack_depth)
                break
            else:
                taken, fall = step_branch(state, insn, index)
                target = slots.target(index, insn.offset)
                if taken is not None and fall is not None:
                    paths += 1
                    if paths > max_states:
                        raise VerifierError(
                            "complexity_exceeded", index, f"more than {max_states} paths explored", ErrorCategory.INTERNAL
                        )
                    worklist.append((target, taken))
                    state = fall
                    index += 1
                elif taken is not None:
                    state = taken
                    index = target
                else:
                    state = fall
                    index += 1

    return VerifierSummary(
        max_stack_depth=max_depth,
        helpers_called=sorted(env.helpers_called),
        maps_touched=sorted(env.maps_touched),
        paths_explored=paths,
        insns_processed=processed,
    )


def from_bytecode_error(exc: BytecodeError) -> VerifierError:
    return VerifierError(exc.rule_id, exc.insn_index, exc.message, ErrorCategory.SYNTAX)


class VerifierService:
    histogram = RuleHistogram()

    @classmethod
    def verify(
        cls,
        prog: RawProgram,
        maps: MapTable = (),
        pt: ProgramTypeId | int | None = None,
        *,
        catalog: Catalog | None = None,
    ) -> VerifierSummary:
        """verify 的记账版本：拒绝时计入 rule_id 直方图。"""
        try:
            return verify(prog, maps, pt, catalog=catalog)
        except VerifierError as exc:
            cls.histogram.record(exc.rule_id)
            logger.debug("program rejected: %s", exc)
            raise

    @classmethod
    def reset_stats(cls) -> None:
        cls.histogram.clear()
