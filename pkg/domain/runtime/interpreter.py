"""参考解释器：逐条取指、按位域解码、用 isa 的 ALU 语义执行。"""

from domain.isa import SlotMap, alu, jmp_taken, opcodes

from .execution import Execution, TailCall
from .types import INSN_CAP, ExecResult, MemoryFault

U64 = opcodes.U64_MAX
U32 = opcodes.U32_MAX


def _operand(insn, regs: list[int]) -> int:
    if insn.opcode & opcodes.BPF_X:
        return regs[insn.src_reg]
    return insn.imm & U64


def run_interpreter(ex: Execution) -> ExecResult:
    image = ex.prog.image
    insns = image.insns
    slots = SlotMap(insns)
    regs = [0] * opcodes.REG_COUNT
    regs[1] = ex.ctx_address
    regs[opcodes.FRAME_REG] = ex.frame_pointer
    memory = ex.memory
    pc = 0
    while True:
        if ex.insn_count >= INSN_CAP:
            ex.hit("exec:insn_cap")
            return ex.finish(regs[0], aborted=True, reason="instruction cap reached")
        if not 0 <= pc < len(insns):
            return ex.finish(regs[0], aborted=True, reason=f"pc {pc} out of range")
        insn = insns[pc]
        ex.insn_count += 1
        ex.hit(f"op:{insn.name}")
        cls = insn.cls
        code = insn.opcode & 0xF0
        try:
            if cls in (opcodes.BPF_ALU, opcodes.BPF_ALU64):
                wide = cls == opcodes.BPF_ALU64
                if code == opcodes.BPF_END:
                    ex.hit("exec:unsupported")
                    return ex.finish(regs[0], aborted=True, reason=f"unsupported {insn.name}")
                value = alu(code, regs[insn.dst_reg], _operand(insn, regs), wide=wide)
                regs[insn.dst_reg] = value & (U64 if wide else U32)
                pc += 1
            elif insn.opcode == opcodes.LD_IMM64:
                if insn.src_reg == opcodes.PSEUDO_MAP_FD:
                    m = ex.kernel.maps.get(insn.wide_imm)
                    if m is None:
                        return ex.finish(regs[0], aborted=True, reason=f"unknown map id {insn.wide_imm}")
                    regs[insn.dst_reg] = m.object.base
                else:
                    regs[insn.dst_reg] = insn.wide_imm & U64
                pc += 1
            elif cls == opcodes.BPF_LDX and insn.opcode & 0xE0 == opcodes.BPF_MEM:
                width = opcodes.SIZE_BYTES[insn.opcode & 0x18]
                regs[insn.dst_reg] = memory.load((regs[insn.src_reg] + insn.offset) & U64, width)
                pc += 1
            elif cls == opcodes.BPF_ST and insn.opcode & 0xE0 == opcodes.BPF_MEM:
                width = opcodes.SIZE_BYTES[insn.opcode & 0x18]
                memory.store((regs[insn.dst_reg] + insn.offset) & U64, width, insn.imm)
                pc += 1
            elif cls == opcodes.BPF_STX and insn.opcode & 0xE0 == opcodes.BPF_MEM:
                width = opcodes.SIZE_BYTES[insn.opcode & 0x18]
                memory.store((regs[insn.dst_reg] + insn.offset) & U64, width, regs[insn.src_reg])
                pc += 1
            elif insn.opcode == opcodes.JA:
                pc = slots.target(pc, insn.offset)
            elif insn.opcode == opcodes.CALL:
                result = ex.call_helper(insn.imm, regs[1:6])
                if isinstance(result, TailCall):
                    ex.prog = result.target
                    insns = result.target.image.insns
                    slots = SlotMap(insns)
                    pc = 0
                    continue
                regs[0] = result & U64
                # 调用者保存寄存器清零，两个引擎一致
                for r in range(1, 6):
                    regs[r] = 0
                pc += 1
            elif insn.opcode == opcodes.EXIT:
                return ex.finish(regs[0])
            elif cls in (opcodes.BPF_JMP, opcodes.BPF_JMP32):
                taken = jmp_taken(code, regs[insn.dst_reg], _operand(insn, regs), wide=cls == opcodes.BPF_JMP)
                pc = slots.target(pc, insn.offset) if taken else pc + 1
            else:
                ex.hit("exec:unsupported")
                return ex.finish(regs[0], aborted=True, reason=f"unsupported {insn.name}")
        except MemoryFault as fault:
            ex.fault(fault, f"op:{insn.name}")
            return ex.finish(regs[0], aborted=True, reason=str(fault))
        if pc is None:
            return ex.finish(regs[0], aborted=True, reason="jump target out of range")
