from domain.catalog import VerifierValueType as V
from domain.isa import Instruction
from domain.isa import opcodes as op

from .scalar import Bounds
from .types import RegState, VerifierEnv, VerifierError, VerifierState

STACK_SIZE = op.STACK_SIZE


def _check_pointer(ptr: RegState, regno: int, index: int) -> None:
    if ptr.is_scalar:
        raise VerifierError("invalid_mem_access", index, f"R{regno} invalid mem access 'scalar'")
    if ptr.maybe_null:
        raise VerifierError("null_deref", index, f"R{regno} invalid mem access '{ptr.vtype}'")


def _stack_window(state: VerifierState, ptr: RegState, off: int, width: int, index: int, write: bool) -> tuple[int, int]:
    """返回访问覆盖的栈字节下标区间 [start, end)。"""
    if write and not ptr.bounds.is_const:
        raise VerifierError("invalid_mem_access", index, "variable stack offset write")
    lo = ptr.smin + off
    hi = ptr.smax + off + width
    if lo < -STACK_SIZE or hi > 0:
        raise VerifierError("stack_oob", index, f"invalid stack access off={lo} size={width}")
    if ptr.bounds.is_const and lo % width:
        raise VerifierError("misaligned_access", index, f"misaligned stack access off={lo} size={width}")
    state.stack_depth = max(state.stack_depth, -lo)
    return STACK_SIZE + lo, STACK_SIZE + hi


def _touched_slots(start: int, end: int) -> range:
    return range(start // 8, (end - 1) // 8 + 1)


def stack_read_check(state: VerifierState, start: int, end: int, index: int) -> None:
    for byte in range(start, end):
        if not state.stack_init[byte]:
            raise VerifierError("stack_uninit_read", index, f"invalid read from stack off {byte - STACK_SIZE}")


def stack_mark_written(state: VerifierState, start: int, end: int) -> None:
    for slot in _touched_slots(start, end):
        state.spills.pop(slot, None)
    state.stack_init[start:end] = b"\x01" * (end - start)


def _load_stack(state: VerifierState, ptr: RegState, off: int, width: int, index: int) -> RegState:
    start, end = _stack_window(state, ptr, off, width, index, write=False)
    if ptr.bounds.is_const and width == 8 and start // 8 in state.spills:
        return state.spills[start // 8]
    stack_read_check(state, start, end, index)
    for slot in _touched_slots(start, end):
        spilled = state.spills.get(slot)
        if spilled is not None and spilled.is_pointer:
            raise VerifierError("invalid_mem_access", index, "partial read of spilled pointer")
    return RegState.scalar(Bounds.of_width(width), id=state.fresh_id())


def _store_stack(state: VerifierState, ptr: RegState, off: int, width: int, value: RegState, index: int) -> None:
    start, end = _stack_window(state, ptr, off, width, index, write=True)
    if width == 8 and start % 8 == 0:
        state.stack_init[start:end] = b"\x01" * 8
        state.spills[start // 8] = value
        return
    if value.is_pointer:
        raise VerifierError("ptr_store_forbidden", index, "partial spill of pointer")
    stack_mark_written(state, start, end)


def _region_window(ptr: RegState, off: int, width: int, index: int) -> None:
    mem_size = ptr.mem_size or 0
    lo = ptr.smin + off
    hi = ptr.smax + off + width
    if lo < 0 or hi > mem_size:
        raise VerifierError("mem_oob", index, f"invalid access to {ptr.vtype} off={lo} size={width} mem_size={mem_size}")


def _ctx_field(env: VerifierEnv, ptr: RegState, off: int, width: int, index: int, write: bool):
    context = env.catalog.program(env.prog_type).context
    field = context.field_at(ptr.smin + off, width) if ptr.bounds.is_const else None
    if field is None or not (field.write if write else field.read):
        kind = "write" if write else "read"
        raise VerifierError("ctx_access_denied", index, f"invalid bpf_context {kind} off={ptr.smin + off} size={width}")
    return field


def step_mem(state: VerifierState, insn: Instruction, index: int, env: VerifierEnv) -> None:
    """LDX/ST/STX：栈、map value、内存区和上下文访问检查。"""
    cls = insn.cls
    mode = insn.opcode & 0xE0
    if cls == op.BPF_LD or mode != op.BPF_MEM:
        raise VerifierError("unsupported_insn", index, f"{insn.name} is not supported")
    width = op.SIZE_BYTES[insn.opcode & 0x18]

    if cls == op.BPF_LDX:
        if insn.dst_reg == op.FRAME_REG:
            raise VerifierError("frame_reg_write", index, "frame pointer is read only")
        ptr = state.read(insn.src_reg, index)
        _check_pointer(ptr, insn.src_reg, index)
        if ptr.vtype is V.PTR_TO_STACK:
            value = _load_stack(state, ptr, insn.offset, width, index)
        elif ptr.vtype in (V.PTR_TO_MAP_VALUE, V.PTR_TO_MEM):
            _region_window(ptr, insn.offset, width, index)
            value = RegState.scalar(Bounds.of_width(width), id=state.fresh_id())
        elif ptr.vtype is V.PTR_TO_CTX:
            field = _ctx_field(env, ptr, insn.offset, width, index, write=False)
            if field.yields.is_pointer:
                value = RegState.pointer(field.yields, id=state.fresh_id())
            else:
                value = RegState.scalar(Bounds.of_width(width), id=state.fresh_id())
        else:
            raise VerifierError("invalid_mem_access", index, f"R{insn.src_reg} invalid mem access '{ptr.vtype}'")
        state.regs[insn.dst_reg] = value
        return

    ptr = state.read(insn.dst_reg, index)
    if cls == op.BPF_STX:
        value = state.read(insn.src_reg, index)
    else:
        value = RegState.const(insn.imm, id=state.fresh_id())
        if width < 8:
            value = RegState.const(insn.imm & ((1 << (8 * width)) - 1), id=value.id)
    _check_pointer(ptr, insn.dst_reg, index)
    if ptr.vtype is V.PTR_TO_STACK:
        _store_stack(state, ptr, insn.offset, width, value, index)
    elif ptr.vtype in (V.PTR_TO_MAP_VALUE, V.PTR_TO_MEM):
        if value.is_pointer:
            raise VerifierError("ptr_store_forbidden", index, f"R{insn.src_reg} leaks addr into {ptr.vtype}")
        _region_window(ptr, insn.offset, width, index)
    elif ptr.vtype is V.PTR_TO_CTX:
        if value.is_pointer:
            raise VerifierError("ptr_store_forbidden", index, f"R{insn.src_reg} leaks addr into ctx")
        _ctx_field(env, ptr, insn.offset, width, index, write=True)
    else:
        raise VerifierError("invalid_mem_access", index, f"R{insn.dst_reg} invalid mem access '{ptr.vtype}'")


def step_ld_imm64(state: VerifierState, insn: Instruction, index: int, env: VerifierEnv) -> None:
    if insn.dst_reg == op.FRAME_REG:
        raise VerifierError("frame_reg_write", index, "frame pointer is read only")
    if insn.src_reg == 0:
        state.regs[insn.dst_reg] = RegState.const(insn.wide_imm or 0, id=state.fresh_id())
        return
    if insn.src_reg != op.PSEUDO_MAP_FD:
        raise VerifierError("unsupported_insn", index, f"ld_imm64 with src_reg={insn.src_reg} is not supported")
    key = insn.wide_imm
    spec = env.maps.get(key)
    if spec is None:
        raise VerifierError("bad_map_ref", index, f"map reference {key} does not resolve")
    if not env.catalog.map_prog_compatible(env.prog_type, spec):
        raise VerifierError(
            "map_prog_incompat", index, f"map type {spec.map_type.name} flags {spec.flags:#x} not usable by this program type"
        )
    env.maps_touched.add(key)
    state.regs[insn.dst_reg] = RegState.pointer(V.CONST_PTR_TO_MAP, map_ordinal=key, id=state.fresh_id())
