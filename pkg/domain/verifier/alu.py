from domain.catalog import VerifierValueType as V
from domain.isa import Instruction
from domain.isa import opcodes as op

from .scalar import Bounds, alu_bounds
from .types import RegState, VerifierError, VerifierState

# 允许加减标量偏移的指针类型
ARITH_POINTER_TYPES = frozenset({V.PTR_TO_STACK, V.PTR_TO_MAP_VALUE, V.PTR_TO_MEM})


def _pointer_arith(state: VerifierState, insn: Instruction, index: int, dst: RegState, src: RegState) -> None:
    code = insn.opcode & 0xF0
    if insn.cls != op.BPF_ALU64:
        raise VerifierError("ptr_arith_forbidden", index, "32-bit arithmetic on pointer prohibited")
    if dst.is_pointer and src.is_pointer:
        if code == op.BPF_SUB and dst.vtype is src.vtype is V.PTR_TO_STACK:
            state.regs[insn.dst_reg] = RegState.scalar(id=state.fresh_id())
            return
        raise VerifierError("ptr_arith_forbidden", index, f"R{insn.dst_reg} pointer {op.ALU_OP_NAMES[code]} pointer prohibited")
    ptr, offset = (dst, src) if dst.is_pointer else (src, dst)
    if code not in (op.BPF_ADD, op.BPF_SUB) or (code == op.BPF_SUB and ptr is src):
        raise VerifierError("ptr_arith_forbidden", index, f"{op.ALU_OP_NAMES[code]} on pointer prohibited")
    if ptr.maybe_null:
        raise VerifierError("ptr_arith_forbidden", index, f"pointer arithmetic on {ptr.vtype} prohibited, null-check it first")
    if ptr.vtype not in ARITH_POINTER_TYPES:
        raise VerifierError("ptr_arith_forbidden", index, f"pointer arithmetic on {ptr.vtype} prohibited")
    bounds = alu_bounds(code, ptr.bounds, offset.bounds)
    state.regs[insn.dst_reg] = ptr.with_(bounds=bounds, id=state.fresh_id())


def step_alu(state: VerifierState, insn: Instruction, index: int) -> None:
    """ALU/ALU64 指令：区间运算，并限制指针算术。"""
    code = insn.opcode & 0xF0
    wide = insn.cls == op.BPF_ALU64
    if code == op.BPF_END or code not in op.ALU_OP_NAMES:
        raise VerifierError("unsupported_insn", index, f"{insn.name} is not supported")
    if insn.dst_reg == op.FRAME_REG:
        raise VerifierError("frame_reg_write", index, "frame pointer is read only")

    if insn.opcode & op.BPF_X:
        src = state.read(insn.src_reg, index)
    else:
        src = RegState.const(insn.imm)

    if code == op.BPF_MOV:
        if wide and insn.opcode & op.BPF_X:
            state.regs[insn.dst_reg] = src
        elif src.is_pointer:
            raise VerifierError("ptr_arith_forbidden", index, f"R{insn.src_reg} partial copy of pointer")
        else:
            bounds = alu_bounds(code, Bounds.const(0), src.bounds, wide=wide)
            state.regs[insn.dst_reg] = RegState.scalar(bounds, id=state.fresh_id())
        return

    dst = state.read(insn.dst_reg, index)
    if code == op.BPF_NEG:
        if dst.is_pointer:
            raise VerifierError("ptr_arith_forbidden", index, f"R{insn.dst_reg} negation of pointer prohibited")
        bounds = alu_bounds(code, dst.bounds, Bounds.const(0), wide=wide)
        state.regs[insn.dst_reg] = RegState.scalar(bounds, id=state.fresh_id())
        return

    if dst.is_pointer or src.is_pointer:
        _pointer_arith(state, insn, index, dst, src)
        return

    bits = 64 if wide else 32
    amount = src.known_const
    if code in (op.BPF_LSH, op.BPF_RSH, op.BPF_ARSH) and amount is not None:
        if not wide:
            amount &= op.U32_MAX
        if amount >= bits:
            raise VerifierError("invalid_shift", index, f"invalid shift {amount}")
    if code in (op.BPF_DIV, op.BPF_MOD) and amount is not None and (amount if wide else amount & op.U32_MAX) == 0:
        raise VerifierError("div_by_zero", index, "division by zero")
    bounds = alu_bounds(code, dst.bounds, src.bounds, wide=wide)
    state.regs[insn.dst_reg] = RegState.scalar(bounds, id=state.fresh_id())
