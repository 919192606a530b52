import random
from enum import IntEnum, IntFlag, StrEnum
from typing import Annotated, Any

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, model_validator


class ProgramTypeId(IntEnum):
    SOCKET_FILTER = 1
    KPROBE = 2
    TRACEPOINT = 5
    XDP = 6
    PERF_EVENT = 7
    CGROUP_SOCK = 9


class MapTypeId(IntEnum):
    HASH = 1
    ARRAY = 2
    PROG_ARRAY = 3
    PERF_EVENT_ARRAY = 4
    PERCPU_ARRAY = 6
    STACK_TRACE = 7
    LRU_HASH = 9
    CGROUP_STORAGE = 19
    QUEUE = 22
    STACK = 23
    RINGBUF = 27


class MapFlag(IntFlag):
    NO_PREALLOC = 0x1
    NO_COMMON_LRU = 0x2
    NUMA_NODE = 0x4
    ZERO_SEED = 0x40
    MMAPABLE = 0x400


class ArgType(StrEnum):
    ANYTHING = "ANYTHING"
    CONST_SIZE = "CONST_SIZE"
    CONST_SIZE_OR_ZERO = "CONST_SIZE_OR_ZERO"
    CONST_ALLOC_SIZE_OR_ZERO = "CONST_ALLOC_SIZE_OR_ZERO"
    PTR_TO_MEM = "PTR_TO_MEM"
    PTR_TO_UNINIT_MEM = "PTR_TO_UNINIT_MEM"
    PTR_TO_MAP_KEY = "PTR_TO_MAP_KEY"
    PTR_TO_MAP_VALUE = "PTR_TO_MAP_VALUE"
    PTR_TO_UNINIT_MAP_VALUE = "PTR_TO_UNINIT_MAP_VALUE"
    CONST_MAP_PTR = "CONST_MAP_PTR"
    PTR_TO_CTX = "PTR_TO_CTX"
    PTR_TO_REF = "PTR_TO_REF"
    PTR_TO_SOCK_COMMON = "PTR_TO_SOCK_COMMON"

    @property
    def is_size(self) -> bool:
        return self in (ArgType.CONST_SIZE, ArgType.CONST_SIZE_OR_ZERO, ArgType.CONST_ALLOC_SIZE_OR_ZERO)

    @property
    def is_mem(self) -> bool:
        return self in (ArgType.PTR_TO_MEM, ArgType.PTR_TO_UNINIT_MEM)


class VerifierValueType(StrEnum):
    SCALAR = "SCALAR"
    PTR_TO_CTX = "PTR_TO_CTX"
    PTR_TO_STACK = "PTR_TO_STACK"
    CONST_PTR_TO_MAP = "CONST_PTR_TO_MAP"
    PTR_TO_MAP_VALUE = "PTR_TO_MAP_VALUE"
    PTR_TO_MAP_VALUE_OR_NULL = "PTR_TO_MAP_VALUE_OR_NULL"
    PTR_TO_MEM = "PTR_TO_MEM"
    PTR_TO_MEM_OR_NULL = "PTR_TO_MEM_OR_NULL"
    PTR_TO_SOCK_COMMON = "PTR_TO_SOCK_COMMON"
    PTR_TO_SOCKET = "PTR_TO_SOCKET"
    PTR_TO_SOCKET_OR_NULL = "PTR_TO_SOCKET_OR_NULL"
    UNINIT = "UNINIT"

    @property
    def is_pointer(self) -> bool:
        return self not in (VerifierValueType.SCALAR, VerifierValueType.UNINIT)

    @property
    def maybe_null(self) -> bool:
        return self.value.endswith("_OR_NULL")

    @property
    def non_null(self) -> "VerifierValueType":
        if self.maybe_null:
            return VerifierValueType(self.value.removesuffix("_OR_NULL"))
        return self

    @property
    def has_mem_size(self) -> bool:
        return self.non_null in (VerifierValueType.PTR_TO_MAP_VALUE, VerifierValueType.PTR_TO_MEM)


class RetType(StrEnum):
    SCALAR = "SCALAR"
    VOID = "VOID"
    PTR_TO_MAP_VALUE = "PTR_TO_MAP_VALUE"
    PTR_TO_MAP_VALUE_OR_NULL = "PTR_TO_MAP_VALUE_OR_NULL"
    PTR_TO_MEM_OR_NULL = "PTR_TO_MEM_OR_NULL"
    PTR_TO_SOCKET_OR_NULL = "PTR_TO_SOCKET_OR_NULL"

    @property
    def value_type(self) -> VerifierValueType:
        if self is RetType.VOID:
            return VerifierValueType.UNINIT
        return VerifierValueType(self.value)


class AttachKind(StrEnum):
    SOCKET = "socket"
    TRACE_EVENT = "trace_event"
    CGROUP = "cgroup"
    DEVICE = "device"

    @property
    def needs_target(self) -> bool:
        return self is not AttachKind.TRACE_EVENT


class LockContext(StrEnum):
    NONE = "none"
    BUCKET = "takes_bucket_lock"
    QUEUE = "takes_queue_lock"


def _enum_by_name(enum_cls):
    def convert(value: Any):
        if isinstance(value, str) and value in enum_cls.__members__:
            return enum_cls[value]
        return value

    return BeforeValidator(convert)


ProgTypeField = Annotated[ProgramTypeId, _enum_by_name(ProgramTypeId)]
MapTypeField = Annotated[MapTypeId, _enum_by_name(MapTypeId)]
MapFlagField = Annotated[MapFlag, _enum_by_name(MapFlag)]


class SizeConstraint(BaseModel):
    """尺寸约束：固定取值集合，或带对齐的区间；power_of_two 额外要求 2 的幂。"""

    min: int = 0
    max: int = 0
    align: int = Field(default=1, ge=1)
    choices: list[int] | None = None
    power_of_two: bool = False

    def allows(self, value: int) -> bool:
        if self.choices is not None:
            return value in self.choices
        if not self.min <= value <= self.max or value % self.align:
            return False
        return not self.power_of_two or (value > 0 and value & (value - 1) == 0)

    def candidates(self, cap: int | None = None) -> list[int]:
        if self.choices is not None:
            values = list(self.choices)
        elif self.power_of_two:
            values = [1 << bit for bit in range(64) if self.min <= (1 << bit) <= self.max]
        else:
            low = -(-self.min // self.align) * self.align
            values = list(range(low, self.max + 1, self.align))
        if cap is not None:
            capped = [v for v in values if v <= cap]
            values = capped or values[:1]
        return values

    def sample(self, rng: random.Random, cap: int | None = None) -> int:
        return rng.choice(self.candidates(cap))

    @model_validator(mode="after")
    def _satisfiable(self) -> "SizeConstraint":
        if not self.candidates():
            raise ValueError("size constraint admits no value")
        return self


class ContextField(BaseModel):
    name: str
    offset: int = Field(ge=0)
    width: int
    read: bool = True
    write: bool = False
    yields: VerifierValueType = VerifierValueType.SCALAR

    @model_validator(mode="after")
    def _check_width(self) -> "ContextField":
        if self.width not in (1, 2, 4, 8):
            raise ValueError(f"field {self.name}: width must be 1, 2, 4 or 8")
        if self.yields.is_pointer and self.width != 8:
            raise ValueError(f"field {self.name}: pointer fields must be 8 bytes wide")
        return self


class ContextDescriptor(BaseModel):
    size: int = Field(gt=0)
    fields: list[ContextField]

    @model_validator(mode="after")
    def _check_layout(self) -> "ContextDescriptor":
        ordered = sorted(self.fields, key=lambda f: f.offset)
        for prev, cur in zip(ordered, ordered[1:]):
            if prev.offset + prev.width > cur.offset:
                raise ValueError(f"context fields {prev.name} and {cur.name} overlap")
        for f in ordered:
            if f.offset + f.width > self.size:
                raise ValueError(f"context field {f.name} exceeds context size")
        return self

    def field_at(self, offset: int, width: int) -> ContextField | None:
        for f in self.fields:
            if f.offset == offset and f.width == width:
                return f
        return None

    def field(self, name: str) -> ContextField | None:
        return next((f for f in self.fields if f.name == name), None)


class HelperProto(BaseModel):
    id: int = Field(gt=0)
    name: str
    args: list[ArgType] = Field(default_factory=list, max_length=5)
    ret: RetType = RetType.SCALAR
    ret_range: tuple[int, int] | None = None
    acquires_ref: str | None = None
    releases_ref: str | None = None
    compatible_map_types: list[MapTypeField] | None = None
    lock_context: LockContext = LockContext.NONE

    @property
    def ret_nullable(self) -> bool:
        return self.ret.value_type.maybe_null

    @property
    def map_arg_index(self) -> int | None:
        for i, arg in enumerate(self.args):
            if arg is ArgType.CONST_MAP_PTR:
                return i
        return None

    @model_validator(mode="after")
    def _check_proto(self) -> "HelperProto":
        if self.acquires_ref and self.releases_ref:
            raise ValueError(f"helper {self.name}: acquires_ref and releases_ref are exclusive")
        if self.args.count(ArgType.CONST_MAP_PTR) > 1:
            raise ValueError(f"helper {self.name}: more than one map argument")
        if (self.map_arg_index is None) != (self.compatible_map_types is None):
            raise ValueError(f"helper {self.name}: map argument and compatible_map_types must come together")
        if self.releases_ref and ArgType.PTR_TO_REF not in self.args:
            raise ValueError(f"helper {self.name}: releasing helper needs a PTR_TO_REF argument")
        return self


class MapTypeSpec(BaseModel):
    id: MapTypeField
    key_size: SizeConstraint
    value_size: SizeConstraint
    max_entries: SizeConstraint
    flag_groups: list[list[MapFlagField]] = Field(default_factory=list)
    lock_context: LockContext = LockContext.NONE

    @property
    def allowed_flags(self) -> int:
        mask = 0
        for group in self.flag_groups:
            for flag in group:
                mask |= int(flag)
        return mask

    def check_flags(self, flags: int) -> str | None:
        if flags & ~self.allowed_flags:
            return "flags"
        for group in self.flag_groups:
            if sum(1 for flag in group if flags & int(flag)) > 1:
                return "flags"
        return None


class ProgramTypeSpec(BaseModel):
    id: ProgTypeField
    section_name: str
    context: ContextDescriptor
    available_helpers: list[str]
    compatible_maps: list[MapTypeField]
    forbidden_map_flags: list[MapFlagField] = Field(default_factory=list)
    attach_kind: AttachKind
    test_runnable: bool = False
    interrupt_capable: bool = False

    @property
    def forbidden_flag_mask(self) -> int:
        mask = 0
        for flag in self.forbidden_map_flags:
            mask |= int(flag)
        return mask


class CatalogDocument(BaseModel):
    """目录文件的顶层结构（schema version 1）。"""

    version: int
    helper_groups: dict[str, list[str]] = Field(default_factory=dict)
    arg_compat: dict[ArgType, list[VerifierValueType]]
    helpers: list[HelperProto]
    map_types: list[MapTypeSpec]
    program_types: list[ProgramTypeSpec]


class MapSpecRequest(BaseModel):
    """一次 BPF_MAP_CREATE 的属性元组。"""

    model_config = ConfigDict(frozen=True)

    map_type: MapTypeField
    key_size: int = Field(ge=0)
    value_size: int = Field(ge=0)
    max_entries: int = Field(ge=0)
    flags: int = Field(default=0, ge=0)
