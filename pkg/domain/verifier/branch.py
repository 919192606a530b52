from domain.isa import Instruction
from domain.isa import opcodes as op

from .scalar import refine
from .types import RegState, VerifierError, VerifierState


def _set_value(state: VerifierState, regno: int, reg: RegState, update) -> None:
    if reg.id:
        state.replace_copies(reg.id, update)
    else:
        state.regs[regno] = update(reg)


def _pointer_branch(
    state: VerifierState, insn: Instruction, index: int, dst: RegState, src: RegState
) -> tuple[VerifierState | None, VerifierState | None]:
    code = insn.opcode & 0xF0
    if dst.is_pointer and src.is_pointer:
        if dst.maybe_null or src.maybe_null or dst.vtype.non_null is not src.vtype.non_null:
            raise VerifierError("bad_cmp_types", index, f"comparison of {dst.vtype} with {src.vtype}")
        return state.copy(), state
    ptr, regno, other = (dst, insn.dst_reg, src) if dst.is_pointer else (src, insn.src_reg, dst)
    if other.known_const != 0 or code not in (op.BPF_JEQ, op.BPF_JNE):
        raise VerifierError("bad_cmp_types", index, f"R{regno} pointer comparison prohibited")
    if not ptr.maybe_null:
        # 非空指针与 0 比较：两个分支都走，不做细化
        return state.copy(), state

    null_state = state.copy()
    if ptr.ref_id is not None:
        null_state.live_refs.pop(ptr.ref_id, None)
    _set_value(null_state, regno, ptr, lambda r: RegState.const(0, id=r.id))
    _set_value(state, regno, ptr, lambda r: r.with_(vtype=r.vtype.non_null))
    if code == op.BPF_JEQ:
        return null_state, state
    return state, null_state


def step_branch(state: VerifierState, insn: Instruction, index: int) -> tuple[VerifierState | None, VerifierState | None]:
    """条件跳转，返回 (跳转分支状态, 顺序分支状态)；不可达的分支为 None。

    传入的 state 可能被某个后继直接复用。
    """
    if insn.cls == op.BPF_JMP32:
        raise VerifierError("unsupported_insn", index, f"{insn.name} is not supported")
    code = insn.opcode & 0xF0
    use_reg = bool(insn.opcode & op.BPF_X)
    dst = state.read(insn.dst_reg, index)
    src = state.read(insn.src_reg, index) if use_reg else RegState.const(insn.imm)
    if dst.is_pointer or src.is_pointer:
        return _pointer_branch(state, insn, index, dst, src)

    taken_bounds = refine(code, dst.bounds, src.bounds, True)
    fall_bounds = refine(code, dst.bounds, src.bounds, False)
    outcomes = []
    for bounds in (taken_bounds, fall_bounds):
        if bounds is None:
            outcomes.append(None)
            continue
        successor = state.copy()
        d_bounds, s_bounds = bounds
        _set_value(successor, insn.dst_reg, dst, lambda r, b=d_bounds: r.with_(bounds=b))
        if use_reg:
            _set_value(successor, insn.src_reg, src, lambda r, b=s_bounds: r.with_(bounds=b))
        outcomes.append(successor)
    return outcomes[0], outcomes[1]
