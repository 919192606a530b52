from . import types as opcodes
from .codec import UNIT_SIZE, decode_program, encode_instruction, encode_program
from .disasm import disassemble, format_instruction
from .errors import BytecodeError
from .semantics import alu, jmp_taken, signed
from .types import (
    OPCODE_NAMES,
    Instruction,
    RawProgram,
    RelocationRecord,
    SlotMap,
    to_s32,
    to_s64,
)

__all__ = [
    "opcodes",
    "UNIT_SIZE",
    "decode_program",
    "encode_instruction",
    "encode_program",
    "disassemble",
    "format_instruction",
    "BytecodeError",
    "alu",
    "jmp_taken",
    "signed",
    "OPCODE_NAMES",
    "Instruction",
    "RawProgram",
    "RelocationRecord",
    "SlotMap",
    "to_s32",
    "to_s64",
]
