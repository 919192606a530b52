from domain.catalog import ArgType, MapSpecRequest, RetType
from domain.catalog import VerifierValueType as V
from domain.isa import Instruction
from domain.isa import opcodes as op

from .memory import STACK_SIZE, stack_mark_written, stack_read_check
from .scalar import Bounds
from .types import RegState, VerifierEnv, VerifierError, VerifierState

TAIL_CALL = "tail_call"
_ZERO = Bounds.const(0)


def _check_region(
    state: VerifierState, reg: RegState, size: int, write: bool, regno: int, index: int
) -> None:
    """helper 通过 reg 访问 size 字节；write 表示 helper 写入（未初始化内存参数）。"""
    if size == 0:
        return
    lo = reg.smin
    hi = reg.smax + size
    if reg.vtype is V.PTR_TO_STACK:
        if hi > 0:
            raise VerifierError("size_exceeds_mem", index, f"R{regno} stack access off={lo} size={size} exceeds frame")
        if lo < -STACK_SIZE:
            raise VerifierError("stack_oob", index, f"R{regno} invalid stack off={lo}")
        state.stack_depth = max(state.stack_depth, -lo)
        start, end = STACK_SIZE + lo, STACK_SIZE + hi
        if write:
            if not reg.bounds.is_const:
                raise VerifierError("invalid_mem_access", index, f"R{regno} variable stack offset write")
            stack_mark_written(state, start, end)
        else:
            stack_read_check(state, start, end, index)
        return
    mem_size = reg.mem_size or 0
    if lo < 0 or hi > mem_size:
        raise VerifierError(
            "size_exceeds_mem", index, f"R{regno} invalid access to memory, mem_size={mem_size} off={lo} size={size}"
        )


def _ret_value(state: VerifierState, helper, map_spec: MapSpecRequest | None, alloc: int | None) -> RegState:
    ret = helper.ret
    if ret is RetType.VOID:
        return RegState()
    if ret is RetType.SCALAR:
        bounds = Bounds.unsigned(*helper.ret_range) if helper.ret_range else Bounds.unknown()
        return RegState.scalar(bounds, id=state.fresh_id())
    vtype = ret.value_type
    if vtype.non_null is V.PTR_TO_MAP_VALUE:
        return RegState.pointer(vtype, mem_size=map_spec.value_size if map_spec else 0, id=state.fresh_id())
    if vtype.non_null is V.PTR_TO_MEM:
        return RegState.pointer(vtype, mem_size=alloc or 0, id=state.fresh_id())
    return RegState.pointer(vtype, id=state.fresh_id())


def check_helper_call(state: VerifierState, insn: Instruction, index: int, env: VerifierEnv) -> None:
    """helper 调用：可用性、参数类型、尺寸边界、map 兼容性与引用获取/释放。"""
    if insn.src_reg == op.PSEUDO_CALL:
        raise VerifierError("unsupported_insn", index, "bpf-to-bpf calls are not supported")
    catalog = env.catalog
    helper_id = insn.imm
    if not catalog.has_helper(helper_id):
        raise VerifierError("unknown_helper", index, f"invalid func unknown#{helper_id}")
    helper = catalog.helper(helper_id)
    if helper_id not in catalog.helpers_for(env.prog_type):
        raise VerifierError("helper_unavailable", index, f"program of this type cannot use helper {helper.name}#{helper_id}")

    args = [state.regs[1 + i] for i in range(len(helper.args))]
    map_spec: MapSpecRequest | None = None
    for i, (kind, reg) in enumerate(zip(helper.args, args)):
        regno = i + 1
        if reg.vtype is V.UNINIT:
            raise VerifierError("uninit_reg_read", index, f"R{regno} !read_ok")
        if reg.vtype not in catalog.compatible_value_types(kind):
            raise VerifierError("arg_type_mismatch", index, f"R{regno} type={reg.vtype} expected={kind}")
        if kind is ArgType.CONST_MAP_PTR:
            map_spec = env.maps[reg.map_ordinal]
            if map_spec.map_type not in helper.compatible_map_types:
                raise VerifierError(
                    "map_func_incompat", index, f"cannot pass map_type {map_spec.map_type.name} into func {helper.name}"
                )

    alloc: int | None = None
    released: int | None = None
    for i, (kind, reg) in enumerate(zip(helper.args, args)):
        regno = i + 1
        if kind is ArgType.PTR_TO_CTX:
            if reg.bounds != _ZERO:
                raise VerifierError("arg_type_mismatch", index, f"R{regno} modified ctx pointer")
        elif kind.is_mem:
            size_kind = helper.args[i + 1] if i + 1 < len(helper.args) else None
            if size_kind is None or not size_kind.is_size:
                raise VerifierError("arg_type_mismatch", index, f"R{regno} memory argument without size")
            size_reg = args[i + 1]
            _check_region(state, reg, size_reg.umax, kind is ArgType.PTR_TO_UNINIT_MEM, regno, index)
            if size_kind is ArgType.CONST_SIZE and size_reg.umin == 0:
                raise VerifierError("size_may_be_zero", index, f"R{regno + 1} invalid zero-sized read")
        elif kind in (ArgType.PTR_TO_MAP_KEY, ArgType.PTR_TO_MAP_VALUE, ArgType.PTR_TO_UNINIT_MAP_VALUE):
            if map_spec is None:
                raise VerifierError("arg_type_mismatch", index, f"R{regno} map key/value without map argument")
            size = map_spec.key_size if kind is ArgType.PTR_TO_MAP_KEY else map_spec.value_size
            _check_region(state, reg, size, kind is ArgType.PTR_TO_UNINIT_MAP_VALUE, regno, index)
        elif kind is ArgType.CONST_ALLOC_SIZE_OR_ZERO:
            if reg.known_const is None:
                raise VerifierError("size_not_const", index, f"R{regno} is not a known constant")
            alloc = reg.known_const
        elif kind is ArgType.PTR_TO_REF:
            owner = state.live_refs.get(reg.ref_id) if reg.ref_id is not None else None
            if owner is None or owner[0] != helper.releases_ref:
                raise VerifierError("release_without_ref", index, f"R{regno} must be referenced when passed to release function")
            if reg.bounds != _ZERO:
                raise VerifierError("arg_type_mismatch", index, f"R{regno} must have zero offset when passed to release func")
            released = reg.ref_id

    if helper.name == TAIL_CALL and state.live_refs:
        raise VerifierError("ref_leak", index, "tail_call would lead to reference leak")
    if released is not None:
        del state.live_refs[released]
        state.invalidate_ref(released)

    r0 = _ret_value(state, helper, map_spec, alloc)
    if helper.acquires_ref:
        ref_id = state.fresh_id()
        state.live_refs[ref_id] = (helper.acquires_ref, index)
        r0 = r0.with_(ref_id=ref_id)
    for regno in range(1, 6):
        state.regs[regno] = RegState()
    state.regs[0] = r0
    env.helpers_called.add(helper_id)


def finalize(state: VerifierState, index: int) -> None:
    """exit：不得留有未释放的引用，r0 必须是已初始化的标量。"""
    if state.live_refs:
        ref_id, (kind, acquired_at) = next(iter(state.live_refs.items()))
        raise VerifierError("ref_leak", index, f"Unreleased reference id={ref_id} kind={kind} alloc_insn={acquired_at}")
    r0 = state.regs[0]
    if r0.vtype is V.UNINIT:
        raise VerifierError("r0_uninit", index, "R0 !read_ok")
    if not r0.is_scalar:
        raise VerifierError("r0_not_scalar", index, f"R0 leaks addr as return value ({r0.vtype})")
