"""第二个执行引擎：先把指令预解码成操作表，再按操作种类查表分发。
ALU 语义独立实现，只在 shift_ub 注入时与解释器分歧。"""

from collections.abc import Callable
from dataclasses import dataclass

from domain.isa import Instruction, SlotMap, opcodes

from .execution import Execution, TailCall
from .types import INSN_CAP, ExecResult, MemoryFault, SeededBug

U64 = opcodes.U64_MAX
U32 = opcodes.U32_MAX


def _s(value: int, bits: int) -> int:
    return value - (1 << bits) if value >> (bits - 1) else value


def _shift(masked: bool, b: int, bits: int) -> int | None:
    if masked:
        return b & (bits - 1)
    return b if b < bits else None


def _lsh(a, b, bits, masked):
    amount = _shift(masked, b, bits)
    return 0 if amount is None else a << amount


def _rsh(a, b, bits, masked):
    amount = _shift(masked, b, bits)
    return 0 if amount is None else a >> amount


def _arsh(a, b, bits, masked):
    amount = _shift(masked, b, bits)
    if amount is None:
        return -1 if a >> (bits - 1) else 0
    return _s(a, bits) >> amount


ALU_TABLE: dict[int, Callable[[int, int, int, bool], int]] = {
    opcodes.BPF_ADD: lambda a, b, bits, m: a + b,
    opcodes.BPF_SUB: lambda a, b, bits, m: a - b,
    opcodes.BPF_MUL: lambda a, b, bits, m: a * b,
    opcodes.BPF_DIV: lambda a, b, bits, m: a // b if b else 0,
    opcodes.BPF_MOD: lambda a, b, bits, m: a % b if b else a,
    opcodes.BPF_OR: lambda a, b, bits, m: a | b,
    opcodes.BPF_AND: lambda a, b, bits, m: a & b,
    opcodes.BPF_XOR: lambda a, b, bits, m: a ^ b,
    opcodes.BPF_LSH: _lsh,
    opcodes.BPF_RSH: _rsh,
    opcodes.BPF_ARSH: _arsh,
    opcodes.BPF_NEG: lambda a, b, bits, m: -a,
    opcodes.BPF_MOV: lambda a, b, bits, m: b,
}

JMP_TABLE: dict[int, Callable[[int, int, int], bool]] = {
    opcodes.BPF_JEQ: lambda a, b, bits: a == b,
    opcodes.BPF_JNE: lambda a, b, bits: a != b,
    opcodes.BPF_JGT: lambda a, b, bits: a > b,
    opcodes.BPF_JGE: lambda a, b, bits: a >= b,
    opcodes.BPF_JLT: lambda a, b, bits: a < b,
    opcodes.BPF_JLE: lambda a, b, bits: a <= b,
    opcodes.BPF_JSET: lambda a, b, bits: bool(a & b),
    opcodes.BPF_JSGT: lambda a, b, bits: _s(a, bits) > _s(b, bits),
    opcodes.BPF_JSGE: lambda a, b, bits: _s(a, bits) >= _s(b, bits),
    opcodes.BPF_JSLT: lambda a, b, bits: _s(a, bits) < _s(b, bits),
    opcodes.BPF_JSLE: lambda a, b, bits: _s(a, bits) <= _s(b, bits),
}


@dataclass(slots=True)
class Op:
    kind: str
    name: str
    dst: int = 0
    src: int = 0
    imm: int = 0
    offset: int = 0
    width: int = 0
    code: int = 0
    reg_operand: bool = False
    bits: int = 64
    target: int | None = None


def predecode(insns: list[Instruction]) -> list[Op]:
    slots = SlotMap(insns)
    ops = []
    for pc, insn in enumerate(insns):
        cls = insn.cls
        code = insn.opcode & 0xF0
        mode = insn.opcode & 0xE0
        common = {"name": insn.name, "dst": insn.dst_reg, "src": insn.src_reg, "offset": insn.offset}
        if cls in (opcodes.BPF_ALU, opcodes.BPF_ALU64) and code in ALU_TABLE:
            bits = 64 if cls == opcodes.BPF_ALU64 else 32
            ops.append(Op("alu", imm=insn.imm & U64, code=code, reg_operand=bool(insn.opcode & opcodes.BPF_X), bits=bits, **common))
        elif insn.opcode == opcodes.LD_IMM64:
            kind = "ld_map" if insn.src_reg == opcodes.PSEUDO_MAP_FD else "ld_imm"
            ops.append(Op(kind, imm=insn.wide_imm, **common))
        elif cls == opcodes.BPF_LDX and mode == opcodes.BPF_MEM:
            ops.append(Op("load", width=opcodes.SIZE_BYTES[insn.opcode & 0x18], **common))
        elif cls == opcodes.BPF_ST and mode == opcodes.BPF_MEM:
            ops.append(Op("store_imm", imm=insn.imm, width=opcodes.SIZE_BYTES[insn.opcode & 0x18], **common))
        elif cls == opcodes.BPF_STX and mode == opcodes.BPF_MEM:
            ops.append(Op("store_reg", width=opcodes.SIZE_BYTES[insn.opcode & 0x18], **common))
        elif insn.opcode == opcodes.JA:
            ops.append(Op("ja", target=slots.target(pc, insn.offset), **common))
        elif insn.opcode == opcodes.CALL:
            ops.append(Op("call", imm=insn.imm, **common))
        elif insn.opcode == opcodes.EXIT:
            ops.append(Op("exit", **common))
        elif cls in (opcodes.BPF_JMP, opcodes.BPF_JMP32) and code in JMP_TABLE:
            bits = 64 if cls == opcodes.BPF_JMP else 32
            ops.append(
                Op(
                    "jcc",
                    imm=insn.imm & U64,
                    code=code,
                    reg_operand=bool(insn.opcode & opcodes.BPF_X),
                    bits=bits,
                    target=slots.target(pc, insn.offset),
                    **common,
                )
            )
        else:
            ops.append(Op("unsupported", **common))
    return ops


class LinearMachine:
    def __init__(self, ex: Execution):
        self.ex = ex
        self.regs = [0] * opcodes.REG_COUNT
        self.regs[1] = ex.ctx_address
        self.regs[opcodes.FRAME_REG] = ex.frame_pointer
        self.masked_shifts = SeededBug.SHIFT_UB not in ex.kernel.seeded_bugs
        self.ops = self._ops(ex.prog)
        self.result: ExecResult | None = None

    def _ops(self, prog) -> list[Op]:
        cache = self.ex.kernel.predecoded
        if prog.id not in cache:
            cache[prog.id] = predecode(prog.image.insns)
        return cache[prog.id]

    def op_alu(self, op: Op, pc: int) -> int:
        mask = (1 << op.bits) - 1
        a = self.regs[op.dst] & mask
        b = (self.regs[op.src] if op.reg_operand else op.imm) & mask
        self.regs[op.dst] = ALU_TABLE[op.code](a, b, op.bits, self.masked_shifts) & mask
        return pc + 1

    def op_ld_imm(self, op: Op, pc: int) -> int:
        self.regs[op.dst] = op.imm & U64
        return pc + 1

    def op_ld_map(self, op: Op, pc: int) -> int | None:
        m = self.ex.kernel.maps.get(op.imm)
        if m is None:
            self.result = self.ex.finish(self.regs[0], aborted=True, reason=f"unknown map id {op.imm}")
            return None
        self.regs[op.dst] = m.object.base
        return pc + 1

    def op_load(self, op: Op, pc: int) -> int:
        self.regs[op.dst] = self.ex.memory.load((self.regs[op.src] + op.offset) & U64, op.width)
        return pc + 1

    def op_store_imm(self, op: Op, pc: int) -> int:
        self.ex.memory.store((self.regs[op.dst] + op.offset) & U64, op.width, op.imm)
        return pc + 1

    def op_store_reg(self, op: Op, pc: int) -> int:
        self.ex.memory.store((self.regs[op.dst] + op.offset) & U64, op.width, self.regs[op.src])
        return pc + 1

    def op_ja(self, op: Op, pc: int) -> int | None:
        return op.target

    def op_jcc(self, op: Op, pc: int) -> int | None:
        mask = (1 << op.bits) - 1
        a = self.regs[op.dst] & mask
        b = (self.regs[op.src] if op.reg_operand else op.imm) & mask
        return op.target if JMP_TABLE[op.code](a, b, op.bits) else pc + 1

    def op_call(self, op: Op, pc: int) -> int:
        result = self.ex.call_helper(op.imm, self.regs[1:6])
        if isinstance(result, TailCall):
            self.ex.prog = result.target
            self.ops = self._ops(result.target)
            return 0
        self.regs[0] = result & U64
        self.regs[1:6] = [0] * 5
        return pc + 1

    def op_exit(self, op: Op, pc: int) -> None:
        self.result = self.ex.finish(self.regs[0])
        return None

    def op_unsupported(self, op: Op, pc: int) -> None:
        self.ex.hit("exec:unsupported")
        self.result = self.ex.finish(self.regs[0], aborted=True, reason=f"unsupported {op.name}")
        return None

    def run(self) -> ExecResult:
        ex = self.ex
        handlers = {
            "alu": self.op_alu,
            "ld_imm": self.op_ld_imm,
            "ld_map": self.op_ld_map,
            "load": self.op_load,
            "store_imm": self.op_store_imm,
            "store_reg": self.op_store_reg,
            "ja": self.op_ja,
            "jcc": self.op_jcc,
            "call": self.op_call,
            "exit": self.op_exit,
            "unsupported": self.op_unsupported,
        }
        pc: int | None = 0
        while True:
            if ex.insn_count >= INSN_CAP:
                ex.hit("exec:insn_cap")
                return ex.finish(self.regs[0], aborted=True, reason="instruction cap reached")
            if not 0 <= pc < len(self.ops):
                return ex.finish(self.regs[0], aborted=True, reason=f"pc {pc} out of range")
            op = self.ops[pc]
            ex.insn_count += 1
            ex.hit(f"op:{op.name}")
            try:
                pc = handlers[op.kind](op, pc)
            except MemoryFault as fault:
                ex.fault(fault, f"op:{op.name}")
                return ex.finish(self.regs[0], aborted=True, reason=str(fault))
            if self.result is not None:
                return self.result
            if pc is None:
                return ex.finish(self.regs[0], aborted=True, reason="jump target out of range")


def run_linear(ex: Execution) -> ExecResult:
    return LinearMachine(ex).run()
