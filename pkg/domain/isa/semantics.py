"""ALU 与条件跳转的具体语义（无符号 64 位值进出）。

除零得 0、模零保留被除数、移位量按位宽取模，与内核解释器一致。
"""

from .types import (
    BPF_ADD,
    BPF_AND,
    BPF_ARSH,
    BPF_DIV,
    BPF_JEQ,
    BPF_JGE,
    BPF_JGT,
    BPF_JLE,
    BPF_JLT,
    BPF_JNE,
    BPF_JSET,
    BPF_JSGE,
    BPF_JSGT,
    BPF_JSLE,
    BPF_JSLT,
    BPF_LSH,
    BPF_MOD,
    BPF_MOV,
    BPF_MUL,
    BPF_NEG,
    BPF_OR,
    BPF_RSH,
    BPF_SUB,
    BPF_XOR,
    U32_MAX,
    U64_MAX,
)


def signed(value: int, bits: int = 64) -> int:
    value &= (1 << bits) - 1
    return value - (1 << bits) if value >> (bits - 1) else value


def alu(op: int, dst: int, src: int, *, wide: bool = True) -> int:
    mask = U64_MAX if wide else U32_MAX
    bits = 64 if wide else 32
    a = dst & mask
    b = src & mask
    if op == BPF_ADD:
        result = a + b
    elif op == BPF_SUB:
        result = a - b
    elif op == BPF_MUL:
        result = a * b
    elif op == BPF_DIV:
        result = a // b if b else 0
    elif op == BPF_MOD:
        result = a % b if b else a
    elif op == BPF_OR:
        result = a | b
    elif op == BPF_AND:
        result = a & b
    elif op == BPF_XOR:
        result = a ^ b
    elif op == BPF_LSH:
        result = a << (b & (bits - 1))
    elif op == BPF_RSH:
        result = a >> (b & (bits - 1))
    elif op == BPF_ARSH:
        result = signed(a, bits) >> (b & (bits - 1))
    elif op == BPF_NEG:
        result = -a
    elif op == BPF_MOV:
        result = b
    else:
        raise ValueError(f"unknown alu op {op:#04x}")
    return result & mask


def jmp_taken(op: int, dst: int, src: int, *, wide: bool = True) -> bool:
    bits = 64 if wide else 32
    mask = (1 << bits) - 1
    a = dst & mask
    b = src & mask
    if op == BPF_JEQ:
        return a == b
    if op == BPF_JNE:
        return a != b
    if op == BPF_JGT:
        return a > b
    if op == BPF_JGE:
        return a >= b
    if op == BPF_JLT:
        return a < b
    if op == BPF_JLE:
        return a <= b
    if op == BPF_JSET:
        return bool(a & b)
    sa, sb = signed(a, bits), signed(b, bits)
    if op == BPF_JSGT:
        return sa > sb
    if op == BPF_JSGE:
        return sa >= sb
    if op == BPF_JSLT:
        return sa < sb
    if op == BPF_JSLE:
        return sa <= sb
    raise ValueError(f"unknown jump op {op:#04x}")
