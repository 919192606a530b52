from collections import Counter
from dataclasses import dataclass, field, replace
from enum import StrEnum

from pydantic import BaseModel, Field

from domain.catalog import Catalog, MapSpecRequest, ProgramTypeId, VerifierValueType

from .scalar import Bounds


class ErrorCategory(StrEnum):
    SYNTAX = "syntax"
    SEMANTIC = "semantic"
    INTERNAL = "internal"
    OTHER = "other"


RULE_CATEGORIES: dict[str, ErrorCategory] = {
    # 语法
    "truncated_insn": ErrorCategory.SYNTAX,
    "incomplete_ld_imm64": ErrorCategory.SYNTAX,
    "bad_ld_imm64": ErrorCategory.SYNTAX,
    "unknown_opcode": ErrorCategory.SYNTAX,
    "bad_register": ErrorCategory.SYNTAX,
    "empty_program": ErrorCategory.SYNTAX,
    "bad_relocation": ErrorCategory.SYNTAX,
    # 控制流
    "loop_detected": ErrorCategory.SEMANTIC,
    "jump_out_of_range": ErrorCategory.SEMANTIC,
    "bad_last_insn": ErrorCategory.SEMANTIC,
    "unreachable_insn": ErrorCategory.SEMANTIC,
    # 寄存器与算术
    "uninit_reg_read": ErrorCategory.SEMANTIC,
    "frame_reg_write": ErrorCategory.SEMANTIC,
    "ptr_arith_forbidden": ErrorCategory.SEMANTIC,
    "invalid_shift": ErrorCategory.SEMANTIC,
    "div_by_zero": ErrorCategory.SEMANTIC,
    "bad_cmp_types": ErrorCategory.SEMANTIC,
    # 访存
    "stack_oob": ErrorCategory.SEMANTIC,
    "stack_uninit_read": ErrorCategory.SEMANTIC,
    "mem_oob": ErrorCategory.SEMANTIC,
    "null_deref": ErrorCategory.SEMANTIC,
    "ctx_access_denied": ErrorCategory.SEMANTIC,
    "misaligned_access": ErrorCategory.SEMANTIC,
    "invalid_mem_access": ErrorCategory.SEMANTIC,
    "ptr_store_forbidden": ErrorCategory.SEMANTIC,
    # helper 调用
    "unknown_helper": ErrorCategory.SEMANTIC,
    "helper_unavailable": ErrorCategory.SEMANTIC,
    "arg_type_mismatch": ErrorCategory.SEMANTIC,
    "size_exceeds_mem": ErrorCategory.SEMANTIC,
    "size_may_be_zero": ErrorCategory.SEMANTIC,
    "size_not_const": ErrorCategory.SEMANTIC,
    "map_func_incompat": ErrorCategory.SEMANTIC,
    "map_prog_incompat": ErrorCategory.SEMANTIC,
    "bad_map_ref": ErrorCategory.SEMANTIC,
    "release_without_ref": ErrorCategory.SEMANTIC,
    # 退出
    "ref_leak": ErrorCategory.SEMANTIC,
    "r0_uninit": ErrorCategory.SEMANTIC,
    "r0_not_scalar": ErrorCategory.SEMANTIC,
    # 其他
    "unsupported_insn": ErrorCategory.OTHER,
    "complexity_exceeded": ErrorCategory.INTERNAL,
}


class VerifierError(Exception):
    def __init__(self, rule_id: str, insn_index: int, message: str, category: ErrorCategory | None = None):
        super().__init__(f"{rule_id} at insn {insn_index}: {message}")
        self.rule_id = rule_id
        self.insn_index = insn_index
        self.message = message
        self.category = category or RULE_CATEGORIES.get(rule_id, ErrorCategory.OTHER)

    def to_dict(self) -> dict:
        return {
            "category": self.category.value,
            "rule_id": self.rule_id,
            "insn_index": self.insn_index,
            "message": self.message,
        }


class VerifierSummary(BaseModel):
    max_stack_depth: int = 0
    helpers_called: list[int] = Field(default_factory=list)
    maps_touched: list[int] = Field(default_factory=list)
    paths_explored: int = 0
    insns_processed: int = 0


class RuleHistogram(Counter):
    """rule_id -> 触发次数。"""

    def record(self, rule_id: str) -> None:
        self[rule_id] += 1

    def top(self, n: int = 5) -> list[tuple[str, int]]:
        return sorted(self.items(), key=lambda kv: (-kv[1], kv[0]))[:n]


_UNKNOWN = Bounds.unknown()


@dataclass(frozen=True, slots=True)
class RegState:
    """单个寄存器的抽象值。

    标量的 bounds 描述取值；指针的 bounds 描述相对区域起点的偏移。
    id 相同的寄存器与栈槽是同一个值的副本，分支细化对所有副本生效。
    """

    vtype: VerifierValueType = VerifierValueType.UNINIT
    bounds: Bounds = _UNKNOWN
    map_ordinal: int | None = None
    mem_size: int | None = None
    ref_id: int | None = None
    id: int = 0

    @property
    def is_scalar(self) -> bool:
        return self.vtype is VerifierValueType.SCALAR

    @property
    def is_pointer(self) -> bool:
        return self.vtype.is_pointer

    @property
    def maybe_null(self) -> bool:
        return self.vtype.maybe_null

    @property
    def known_const(self) -> int | None:
        if self.is_scalar and self.bounds.is_const:
            return self.bounds.umin
        return None

    @property
    def smin(self) -> int:
        return self.bounds.smin

    @property
    def smax(self) -> int:
        return self.bounds.smax

    @property
    def umin(self) -> int:
        return self.bounds.umin

    @property
    def umax(self) -> int:
        return self.bounds.umax

    @classmethod
    def scalar(cls, bounds: Bounds = _UNKNOWN, id: int = 0) -> "RegState":
        return cls(VerifierValueType.SCALAR, bounds, id=id)

    @classmethod
    def const(cls, value: int, id: int = 0) -> "RegState":
        return cls(VerifierValueType.SCALAR, Bounds.const(value), id=id)

    @classmethod
    def pointer(cls, vtype: VerifierValueType, **kwargs) -> "RegState":
        return cls(vtype, Bounds.const(0), **kwargs)

    def with_(self, **changes) -> "RegState":
        return replace(self, **changes)




@dataclass(slots=True)
class VerifierState:
    regs: list[RegState]
    # 每字节是否已初始化
    stack_init: bytearray = field(default_factory=lambda: bytearray(512))
    # 8 字节对齐槽位 -> 溢出保存的寄存器状态
    spills: dict[int, RegState] = field(default_factory=dict)
    # ref_id -> (资源种类, 获取指令下标)
    live_refs: dict[int, tuple[str, int]] = field(default_factory=dict)
    next_id: int = 1
    stack_depth: int = 0

    def copy(self) -> "VerifierState":
        return VerifierState(
            regs=list(self.regs),
            stack_init=bytearray(self.stack_init),
            spills=dict(self.spills),
            live_refs=dict(self.live_refs),
            next_id=self.next_id,
            stack_depth=self.stack_depth,
        )

    def read(self, regno: int, index: int) -> RegState:
        reg = self.regs[regno]
        if reg.vtype is VerifierValueType.UNINIT:
            raise VerifierError("uninit_reg_read", index, f"R{regno} !read_ok")
        return reg

    def fresh_id(self) -> int:
        value = self.next_id
        self.next_id += 1
        return value

    def replace_copies(self, value_id: int, update) -> None:
        """对携带同一 id 的寄存器和溢出槽统一应用 update。"""
        if not value_id:
            return
        for i, reg in enumerate(self.regs):
            if reg.id == value_id:
                self.regs[i] = update(reg)
        for slot, reg in list(self.spills.items()):
            if reg.id == value_id:
                self.spills[slot] = update(reg)

    def invalidate_ref(self, ref_id: int) -> None:
        """释放引用后，寄存器中的副本不可再读，栈上的副本退化为普通标量。"""
        for i, reg in enumerate(self.regs):
            if reg.ref_id == ref_id:
                self.regs[i] = RegState()
        for slot, reg in list(self.spills.items()):
            if reg.ref_id == ref_id:
                self.spills[slot] = RegState.scalar(id=self.fresh_id())


@dataclass(slots=True)
class VerifierEnv:
    catalog: Catalog
    prog_type: ProgramTypeId
    maps: dict[int, MapSpecRequest]
    helpers_called: set[int] = field(default_factory=set)
    maps_touched: set[int] = field(default_factory=set)
