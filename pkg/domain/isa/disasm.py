from typing import Mapping

from .types import (
    BPF_ABS,
    BPF_ALU,
    BPF_ALU64,
    BPF_ATOMIC,
    BPF_END,
    BPF_IND,
    BPF_JMP,
    BPF_JMP32,
    BPF_LD,
    BPF_LDX,
    BPF_MOV,
    BPF_NEG,
    BPF_ST,
    BPF_STX,
    BPF_X,
    CALL,
    EXIT,
    JA,
    LD_IMM64,
    PSEUDO_CALL,
    PSEUDO_MAP_FD,
    SIZE_BYTES,
    Instruction,
    RawProgram,
)

_ALU_SYMBOLS = {
    0x00: "+",
    0x10: "-",
    0x20: "*",
    0x30: "/",
    0x40: "|",
    0x50: "&",
    0x60: "<<",
    0x70: ">>",
    0x90: "%",
    0xA0: "^",
    0xC0: "s>>",
}

_JMP_SYMBOLS = {
    0x10: "==",
    0x20: ">",
    0x30: ">=",
    0x40: "&",
    0x50: "!=",
    0x60: "s>",
    0x70: "s>=",
    0xA0: "<",
    0xB0: "<=",
    0xC0: "s<",
    0xD0: "s<=",
}


def _mem(insn: Instruction, base: int) -> str:
    bits = SIZE_BYTES[insn.opcode & 0x18] * 8
    return f"*(u{bits} *)(r{base} {insn.offset:+d})"


def format_instruction(insn: Instruction, helper_names: Mapping[int, str] | None = None) -> str:
    op = insn.opcode
    cls = insn.cls
    if op == EXIT:
        return "exit"
    if op == CALL:
        if insn.src_reg == PSEUDO_CALL:
            return f"call pc{insn.imm:+d}"
        name = (helper_names or {}).get(insn.imm)
        return f"call bpf_{name}" if name else f"call #{insn.imm}"
    if op == JA:
        return f"goto {insn.offset:+d}"
    if op == LD_IMM64:
        if insn.src_reg == PSEUDO_MAP_FD:
            return f"r{insn.dst_reg} = map[{insn.wide_imm}] ll"
        return f"r{insn.dst_reg} = {insn.wide_imm:#x} ll"

    if cls in (BPF_ALU, BPF_ALU64):
        reg = "r" if cls == BPF_ALU64 else "w"
        alu_op = op & 0xF0
        dst = f"{reg}{insn.dst_reg}"
        operand = f"{reg}{insn.src_reg}" if op & BPF_X else str(insn.imm)
        if alu_op == BPF_END:
            order = "be" if op & BPF_X else "le"
            return f"r{insn.dst_reg} = {order}{insn.imm} r{insn.dst_reg}"
        if alu_op == BPF_NEG:
            return f"{dst} = -{dst}"
        if alu_op == BPF_MOV:
            return f"{dst} = {operand}"
        return f"{dst} {_ALU_SYMBOLS[alu_op]}= {operand}"

    if cls in (BPF_JMP, BPF_JMP32):
        reg = "r" if cls == BPF_JMP else "w"
        operand = f"{reg}{insn.src_reg}" if op & BPF_X else str(insn.imm)
        return f"if {reg}{insn.dst_reg} {_JMP_SYMBOLS[op & 0xF0]} {operand} goto {insn.offset:+d}"

    if cls == BPF_LDX:
        return f"r{insn.dst_reg} = {_mem(insn, insn.src_reg)}"
    if cls == BPF_ST:
        return f"{_mem(insn, insn.dst_reg)} = {insn.imm}"
    if cls == BPF_STX:
        if op & 0xE0 == BPF_ATOMIC:
            return f"lock {_mem(insn, insn.dst_reg)} += r{insn.src_reg}"
        return f"{_mem(insn, insn.dst_reg)} = r{insn.src_reg}"
    if cls == BPF_LD:
        bits = SIZE_BYTES[op & 0x18] * 8
        if op & 0xE0 == BPF_ABS:
            return f"r0 = *(u{bits} *)skb[{insn.imm}]"
        if op & 0xE0 == BPF_IND:
            return f"r0 = *(u{bits} *)skb[r{insn.src_reg} + {insn.imm}]"
    return f".byte {op:#04x}"


def disassemble(prog: RawProgram | list[Instruction], helper_names: Mapping[int, str] | None = None) -> str:
    """每条指令一行的稳定文本格式。"""
    insns = prog.insns if isinstance(prog, RawProgram) else prog
    return "\n".join(format_instruction(insn, helper_names) for insn in insns)
