"""eBPF 指令集常量与指令模型。

字节布局：op(1) dst|src 半字节(1) offset(2, LE 有符号) imm(4, LE 有符号)；
64 位立即数加载占两个槽位，第二个槽位的 imm 保存高 32 位。
"""

from dataclasses import dataclass, field

from .errors import BytecodeError

# 指令类别
BPF_LD = 0x00
BPF_LDX = 0x01
BPF_ST = 0x02
BPF_STX = 0x03
BPF_ALU = 0x04
BPF_JMP = 0x05
BPF_JMP32 = 0x06
BPF_ALU64 = 0x07

# 源操作数
BPF_K = 0x00
BPF_X = 0x08

# 访存宽度
BPF_W = 0x00
BPF_H = 0x08
BPF_B = 0x10
BPF_DW = 0x18

# 访存模式
BPF_IMM = 0x00
BPF_ABS = 0x20
BPF_IND = 0x40
BPF_MEM = 0x60
BPF_ATOMIC = 0xC0

# ALU 操作
BPF_ADD = 0x00
BPF_SUB = 0x10
BPF_MUL = 0x20
BPF_DIV = 0x30
BPF_OR = 0x40
BPF_AND = 0x50
BPF_LSH = 0x60
BPF_RSH = 0x70
BPF_NEG = 0x80
BPF_MOD = 0x90
BPF_XOR = 0xA0
BPF_MOV = 0xB0
BPF_ARSH = 0xC0
BPF_END = 0xD0

# 跳转操作
BPF_JA = 0x00
BPF_JEQ = 0x10
BPF_JGT = 0x20
BPF_JGE = 0x30
BPF_JSET = 0x40
BPF_JNE = 0x50
BPF_JSGT = 0x60
BPF_JSGE = 0x70
BPF_CALL = 0x80
BPF_EXIT = 0x90
BPF_JLT = 0xA0
BPF_JLE = 0xB0
BPF_JSLT = 0xC0
BPF_JSLE = 0xD0

LD_IMM64 = BPF_LD | BPF_IMM | BPF_DW
CALL = BPF_JMP | BPF_CALL
EXIT = BPF_JMP | BPF_EXIT
JA = BPF_JMP | BPF_JA

# ld_imm64 / call 的 src_reg 伪值
PSEUDO_MAP_FD = 1
PSEUDO_CALL = 1

MAX_REG = 10
FRAME_REG = 10
REG_COUNT = 11
STACK_SIZE = 512

U32_MAX = (1 << 32) - 1
U64_MAX = (1 << 64) - 1
S64_MIN = -(1 << 63)
S64_MAX = (1 << 63) - 1

SIZE_BYTES = {BPF_B: 1, BPF_H: 2, BPF_W: 4, BPF_DW: 8}

ALU_OP_NAMES = {
    BPF_ADD: "add",
    BPF_SUB: "sub",
    BPF_MUL: "mul",
    BPF_DIV: "div",
    BPF_OR: "or",
    BPF_AND: "and",
    BPF_LSH: "lsh",
    BPF_RSH: "rsh",
    BPF_NEG: "neg",
    BPF_MOD: "mod",
    BPF_XOR: "xor",
    BPF_MOV: "mov",
    BPF_ARSH: "arsh",
}

JMP_OP_NAMES = {
    BPF_JEQ: "jeq",
    BPF_JGT: "jgt",
    BPF_JGE: "jge",
    BPF_JSET: "jset",
    BPF_JNE: "jne",
    BPF_JSGT: "jsgt",
    BPF_JSGE: "jsge",
    BPF_JLT: "jlt",
    BPF_JLE: "jle",
    BPF_JSLT: "jslt",
    BPF_JSLE: "jsle",
}

_SIZE_SUFFIX = {BPF_W: "w", BPF_H: "h", BPF_B: "b", BPF_DW: "dw"}


def _build_opcode_names() -> dict[int, str]:
    names: dict[int, str] = {}
    for cls, prefix in ((BPF_ALU64, "alu64"), (BPF_ALU, "alu32")):
        for op, name in ALU_OP_NAMES.items():
            if op == BPF_NEG:
                names[cls | op] = f"{prefix}_neg"
                continue
            names[cls | op | BPF_K] = f"{prefix}_{name}_k"
            names[cls | op | BPF_X] = f"{prefix}_{name}_x"
    names[BPF_ALU | BPF_END | BPF_K] = "end_le"
    names[BPF_ALU | BPF_END | BPF_X] = "end_be"
    names[JA] = "ja"
    names[CALL] = "call"
    names[EXIT] = "exit"
    for op, name in JMP_OP_NAMES.items():
        names[BPF_JMP | op | BPF_K] = f"{name}_k"
        names[BPF_JMP | op | BPF_X] = f"{name}_x"
        names[BPF_JMP32 | op | BPF_K] = f"{name}32_k"
        names[BPF_JMP32 | op | BPF_X] = f"{name}32_x"
    for size, suffix in _SIZE_SUFFIX.items():
        names[BPF_LDX | BPF_MEM | size] = f"ldx_{suffix}"
        names[BPF_ST | BPF_MEM | size] = f"st_{suffix}"
        names[BPF_STX | BPF_MEM | size] = f"stx_{suffix}"
        if size != BPF_DW:
            names[BPF_LD | BPF_ABS | size] = f"ld_abs_{suffix}"
            names[BPF_LD | BPF_IND | size] = f"ld_ind_{suffix}"
    names[BPF_STX | BPF_ATOMIC | BPF_W] = "atomic_w"
    names[BPF_STX | BPF_ATOMIC | BPF_DW] = "atomic_dw"
    names[LD_IMM64] = "ld_imm64"
    return names


# 解码器认识的全部操作码
OPCODE_NAMES: dict[int, str] = _build_opcode_names()


def to_s64(value: int) -> int:
    value &= U64_MAX
    return value - (1 << 64) if value >> 63 else value


def to_s32(value: int) -> int:
    value &= U32_MAX
    return value - (1 << 32) if value >> 31 else value


def insn_class(opcode: int) -> int:
    return opcode & 0x07


@dataclass(frozen=True, slots=True)
class Instruction:
    opcode: int
    dst_reg: int = 0
    src_reg: int = 0
    offset: int = 0
    imm: int = 0
    wide_imm: int | None = None

    @property
    def is_wide(self) -> bool:
        return self.opcode == LD_IMM64

    @property
    def slots(self) -> int:
        return 2 if self.is_wide else 1

    @property
    def cls(self) -> int:
        return self.opcode & 0x07

    @property
    def name(self) -> str:
        return OPCODE_NAMES.get(self.opcode, f"op_{self.opcode:#04x}")

    # 以下构造函数供降级与测试使用

    @classmethod
    def mov64_imm(cls, dst: int, imm: int) -> "Instruction":
        return cls(BPF_ALU64 | BPF_MOV | BPF_K, dst, 0, 0, imm)

    @classmethod
    def mov64_reg(cls, dst: int, src: int) -> "Instruction":
        return cls(BPF_ALU64 | BPF_MOV | BPF_X, dst, src)

    @classmethod
    def alu64_imm(cls, op: int, dst: int, imm: int) -> "Instruction":
        return cls(BPF_ALU64 | op | BPF_K, dst, 0, 0, imm)

    @classmethod
    def alu64_reg(cls, op: int, dst: int, src: int) -> "Instruction":
        return cls(BPF_ALU64 | op | BPF_X, dst, src)

    @classmethod
    def alu32_imm(cls, op: int, dst: int, imm: int) -> "Instruction":
        return cls(BPF_ALU | op | BPF_K, dst, 0, 0, imm)

    @classmethod
    def alu32_reg(cls, op: int, dst: int, src: int) -> "Instruction":
        return cls(BPF_ALU | op | BPF_X, dst, src)

    @classmethod
    def ld_imm64(cls, dst: int, value: int, src: int = 0) -> "Instruction":
        value = to_s64(value)
        return cls(LD_IMM64, dst, src, 0, to_s32(value), value)

    @classmethod
    def ld_map(cls, dst: int, map_ref: int) -> "Instruction":
        return cls.ld_imm64(dst, map_ref, src=PSEUDO_MAP_FD)

    @classmethod
    def ldx(cls, size: int, dst: int, src: int, offset: int) -> "Instruction":
        return cls(BPF_LDX | BPF_MEM | size, dst, src, offset)

    @classmethod
    def st_imm(cls, size: int, dst: int, offset: int, imm: int) -> "Instruction":
        return cls(BPF_ST | BPF_MEM | size, dst, 0, offset, imm)

    @classmethod
    def stx(cls, size: int, dst: int, src: int, offset: int) -> "Instruction":
        return cls(BPF_STX | BPF_MEM | size, dst, src, offset)

    @classmethod
    def jmp_imm(cls, op: int, dst: int, imm: int, offset: int) -> "Instruction":
        return cls(BPF_JMP | op | BPF_K, dst, 0, offset, imm)

    @classmethod
    def jmp_reg(cls, op: int, dst: int, src: int, offset: int) -> "Instruction":
        return cls(BPF_JMP | op | BPF_X, dst, src, offset)

    @classmethod
    def ja(cls, offset: int) -> "Instruction":
        return cls(JA, 0, 0, offset)

    @classmethod
    def call(cls, helper_id: int) -> "Instruction":
        return cls(CALL, 0, 0, 0, helper_id)

    @classmethod
    def exit(cls) -> "Instruction":
        return cls(EXIT)


@dataclass(frozen=True, slots=True)
class RelocationRecord:
    insn_index: int
    map_ordinal: int


@dataclass(slots=True)
class RawProgram:
    prog_type: int
    section_name: str
    insns: list[Instruction]
    relocations: list[RelocationRecord] = field(default_factory=list)
    relocated: bool = False

    def __post_init__(self) -> None:
        for reloc in self.relocations:
            if not 0 <= reloc.insn_index < len(self.insns) or not self.insns[reloc.insn_index].is_wide:
                raise BytecodeError(
                    "bad_relocation",
                    reloc.insn_index,
                    "relocation does not address a ld_imm64 instruction",
                )


class SlotMap:
    """融合后的指令下标与 8 字节槽位下标之间的换算。跳转偏移按槽位计。"""

    def __init__(self, insns: list[Instruction]):
        self.slot_of: list[int] = []
        self._index_at: dict[int, int] = {}
        slot = 0
        for index, insn in enumerate(insns):
            self.slot_of.append(slot)
            self._index_at[slot] = index
            slot += insn.slots
        self.total_slots = slot

    def index_at(self, slot: int) -> int | None:
        return self._index_at.get(slot)

    def target(self, index: int, offset: int) -> int | None:
        """跳转目标的指令下标；越界或落在宽指令中间时返回 None。"""
        return self._index_at.get(self.slot_of[index] + 1 + offset)

    def offset_to(self, index: int, target: int) -> int:
        return self.slot_of[target] - self.slot_of[index] - 1
