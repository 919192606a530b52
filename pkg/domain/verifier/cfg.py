from domain.isa import opcodes as op
from domain.isa import RawProgram, SlotMap

from .types import VerifierError


def _is_jump(opcode: int) -> bool:
    if opcode & 0x07 not in (op.BPF_JMP, op.BPF_JMP32):
        return False
    return opcode & 0xF0 not in (op.BPF_CALL, op.BPF_EXIT)


def _successors(prog: RawProgram, slots: SlotMap, index: int) -> list[int]:
    insn = prog.insns[index]
    if insn.opcode == op.EXIT:
        return []
    if insn.opcode == op.JA:
        return [slots.target(index, insn.offset)]
    out = []
    if index + 1 < len(prog.insns):
        out.append(index + 1)
    if _is_jump(insn.opcode):
        out.append(slots.target(index, insn.offset))
    return out


def check_cfg(prog: RawProgram) -> None:
    """控制流检查：跳转目标合法、末条指令为 exit/ja、无环、全部可达。"""
    insns = prog.insns
    if not insns:
        raise VerifierError("empty_program", 0, "program has no instructions")
    slots = SlotMap(insns)
    for index, insn in enumerate(insns):
        if _is_jump(insn.opcode) and slots.target(index, insn.offset) is None:
            raise VerifierError("jump_out_of_range", index, f"jump out of range from insn {index} to {insn.offset:+d}")
    if insns[-1].opcode not in (op.EXIT, op.JA):
        raise VerifierError("bad_last_insn", len(insns) - 1, "last insn is not an exit or jmp")

    # 迭代 DFS；0 未访问，1 在栈上，2 已完成
    color = [0] * len(insns)
    color[0] = 1
    stack = [(0, iter(_successors(prog, slots, 0)))]
    while stack:
        node, children = stack[-1]
        child = next(children, None)
        if child is None:
            color[node] = 2
            stack.pop()
            continue
        if color[child] == 1:
            raise VerifierError("loop_detected", node, f"back-edge from insn {node} to {child}")
        if color[child] == 0:
            color[child] = 1
            stack.append((child, iter(_successors(prog, slots, child))))

    for index, state in enumerate(color):
        if not state:
            raise VerifierError("unreachable_insn", index, f"unreachable insn {index}")
