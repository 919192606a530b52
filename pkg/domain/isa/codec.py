import struct
from typing import Iterable

from .errors import BytecodeError
from .types import (
    LD_IMM64,
    MAX_REG,
    OPCODE_NAMES,
    U32_MAX,
    Instruction,
    to_s32,
    to_s64,
)

_UNIT = struct.Struct("<BBhi")
UNIT_SIZE = _UNIT.size


def _check_fields(insn: Instruction, index: int = 0) -> None:
    if not 0 <= insn.opcode <= 0xFF:
        raise BytecodeError("field_range", index, f"opcode {insn.opcode} out of range")
    if not (0 <= insn.dst_reg <= MAX_REG and 0 <= insn.src_reg <= MAX_REG):
        raise BytecodeError(
            "bad_register", index, f"register index out of range: dst={insn.dst_reg} src={insn.src_reg}"
        )
    if not -(1 << 15) <= insn.offset < (1 << 15):
        raise BytecodeError("field_range", index, f"offset {insn.offset} does not fit in s16")
    if not -(1 << 31) <= insn.imm < (1 << 31):
        raise BytecodeError("field_range", index, f"imm {insn.imm} does not fit in s32")
    if insn.is_wide:
        if insn.wide_imm is None:
            raise BytecodeError("bad_wide_imm", index, "ld_imm64 without wide_imm")
        if not -(1 << 63) <= insn.wide_imm < (1 << 63):
            raise BytecodeError("field_range", index, "wide_imm does not fit in s64")
        if insn.imm != to_s32(insn.wide_imm):
            raise BytecodeError("bad_wide_imm", index, "imm must hold the low 32 bits of wide_imm")
    elif insn.wide_imm is not None:
        raise BytecodeError("bad_wide_imm", index, f"wide_imm on non-wide opcode {insn.opcode:#04x}")


def encode_instruction(insn: Instruction) -> bytes:
    _check_fields(insn)
    regs = (insn.src_reg << 4) | insn.dst_reg
    if insn.is_wide:
        high = to_s32(to_s64(insn.wide_imm) >> 32)
        return _UNIT.pack(insn.opcode, regs, insn.offset, insn.imm) + _UNIT.pack(0, 0, 0, high)
    return _UNIT.pack(insn.opcode, regs, insn.offset, insn.imm)


def encode_program(insns: Iterable[Instruction]) -> bytes:
    return b"".join(encode_instruction(insn) for insn in insns)


def decode_program(data: bytes) -> list[Instruction]:
    """把字节序列解码为指令列表，宽指令融合为一条。任何输入都只会抛出 BytecodeError。"""
    if not data:
        raise BytecodeError("empty_program", 0, "empty program")
    if len(data) % UNIT_SIZE:
        raise BytecodeError("truncated_insn", len(data) // UNIT_SIZE, "truncated instruction")

    units = list(_UNIT.iter_unpack(data))
    insns: list[Instruction] = []
    i = 0
    while i < len(units):
        opcode, regs, offset, imm = units[i]
        dst, src = regs & 0x0F, regs >> 4
        index = len(insns)
        if opcode not in OPCODE_NAMES:
            raise BytecodeError("unknown_opcode", index, f"unknown opcode {opcode:#04x}")
        if dst > MAX_REG or src > MAX_REG:
            raise BytecodeError("bad_register", index, f"invalid register r{max(dst, src)}")
        if opcode != LD_IMM64:
            insns.append(Instruction(opcode, dst, src, offset, imm))
            i += 1
            continue
        if i + 1 >= len(units):
            raise BytecodeError("incomplete_ld_imm64", index, "incomplete ld_imm64")
        next_op, next_regs, next_off, high = units[i + 1]
        if next_op or next_regs or next_off:
            raise BytecodeError("bad_ld_imm64", index, "invalid second slot of ld_imm64")
        wide = to_s64((imm & U32_MAX) | ((high & U32_MAX) << 32))
        insns.append(Instruction(opcode, dst, src, offset, imm, wide))
        i += 2
    return insns
