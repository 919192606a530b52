"""Tests for the static checker: control flow, registers, memory, helper calls and references."""

import itertools
import random

import pytest

from domain.catalog import MapSpecRequest, MapTypeId, ProgramTypeId
from domain.isa import BytecodeError, Instruction as I, RawProgram, alu, opcodes as op
from domain.verifier import (
    Bounds,
    ErrorCategory,
    VerifierError,
    VerifierService,
    alu_bounds,
    from_bytecode_error,
    refine,
    verify,
)

ARRAY = MapSpecRequest(map_type=MapTypeId.ARRAY, key_size=4, value_size=8, max_entries=4)
RINGBUF = MapSpecRequest(map_type=MapTypeId.RINGBUF, key_size=0, value_size=0, max_entries=4096)
STORAGE = MapSpecRequest(map_type=MapTypeId.CGROUP_STORAGE, key_size=8, value_size=8, max_entries=0)

RET0 = [I.mov64_imm(0, 0), I.exit()]


def prog(insns: list[I], pt: ProgramTypeId = ProgramTypeId.SOCKET_FILTER) -> RawProgram:
    return RawProgram(int(pt), "test", insns)


def rejected(insns: list[I], maps=(), pt: ProgramTypeId = ProgramTypeId.SOCKET_FILTER, **kwargs) -> str:
    with pytest.raises(VerifierError) as exc:
        verify(prog(insns, pt), maps, **kwargs)
    return exc.value.rule_id


def lookup_prefix() -> list[I]:
    return [
        I.st_imm(op.BPF_W, 10, -4, 0),
        I.ld_map(1, 0),
        I.mov64_reg(2, 10),
        I.alu64_imm(op.BPF_ADD, 2, -4),
        I.call(1),
    ]


def reserve_prefix(size: int = 8) -> list[I]:
    return [I.ld_map(1, 0), I.mov64_imm(2, size), I.mov64_imm(3, 0), I.call(131)]


class TestControlFlow:
    def test_minimal_program(self) -> None:
        summary = verify(prog(RET0))
        assert summary.paths_explored == 1
        assert summary.insns_processed == 2

    def test_loop(self) -> None:
        assert rejected([I.mov64_imm(0, 0), I.ja(-1)]) == "loop_detected"

    def test_jump_out_of_range(self) -> None:
        assert rejected([I.jmp_imm(op.BPF_JEQ, 1, 0, 5), *RET0]) == "jump_out_of_range"

    def test_bad_last_insn(self) -> None:
        assert rejected([I.mov64_imm(0, 0)]) == "bad_last_insn"

    def test_unreachable(self) -> None:
        assert rejected([*RET0, I.mov64_imm(0, 1), I.exit()]) == "unreachable_insn"

    def test_complexity_bound(self) -> None:
        body = []
        for _ in range(5):
            body += [I.call(7), I.jmp_imm(op.BPF_JGT, 0, 10, 0)]
        insns = [*body, *RET0]
        assert verify(prog(insns)).paths_explored == 32
        assert rejected(insns, max_states=8) == "complexity_exceeded"


class TestRegisters:
    def test_r0_uninit(self) -> None:
        assert rejected([I.exit()]) == "r0_uninit"

    def test_uninit_read(self) -> None:
        assert rejected([I.mov64_reg(0, 2), I.exit()]) == "uninit_reg_read"

    def test_frame_pointer_is_read_only(self) -> None:
        assert rejected([I.mov64_imm(10, 0), *RET0]) == "frame_reg_write"

    def test_pointer_return(self) -> None:
        assert rejected([I.mov64_reg(0, 10), I.exit()]) == "r0_not_scalar"

    def test_ctx_arithmetic(self) -> None:
        assert rejected([I.mov64_reg(0, 1), I.alu64_imm(op.BPF_ADD, 0, 8), *RET0]) == "ptr_arith_forbidden"

    def test_division_by_constant_zero(self) -> None:
        assert rejected([I.mov64_imm(0, 1), I.alu64_imm(op.BPF_DIV, 0, 0), I.exit()]) == "div_by_zero"

    def test_oversized_shift(self) -> None:
        assert rejected([I.mov64_imm(0, 1), I.alu64_imm(op.BPF_LSH, 0, 64), I.exit()]) == "invalid_shift"

    def test_unsupported_opcode(self) -> None:
        assert rejected([I(op.BPF_ALU | op.BPF_END | op.BPF_K, 0, 0, 0, 16), *RET0]) == "unsupported_insn"


class TestMemory:
    def test_stack_write_above_frame(self) -> None:
        assert rejected([I.st_imm(op.BPF_DW, 10, 0, 0), *RET0]) == "stack_oob"

    def test_stack_uninit_read(self) -> None:
        assert rejected([I.ldx(op.BPF_DW, 0, 10, -8), I.exit()]) == "stack_uninit_read"

    def test_misaligned(self) -> None:
        assert rejected([I.st_imm(op.BPF_W, 10, -6, 0), *RET0]) == "misaligned_access"

    def test_spill_and_fill(self) -> None:
        insns = [I.st_imm(op.BPF_DW, 10, -8, 7), I.ldx(op.BPF_DW, 0, 10, -8), I.exit()]
        assert verify(prog(insns)).max_stack_depth == 8

    def test_ctx_field_read(self) -> None:
        verify(prog([I.ldx(op.BPF_W, 0, 1, 0), I.exit()]))

    def test_ctx_access_denied(self) -> None:
        assert rejected([I.ldx(op.BPF_W, 0, 1, 1000), I.exit()]) == "ctx_access_denied"

    def test_ctx_read_only_field(self) -> None:
        assert rejected([I.st_imm(op.BPF_W, 1, 0, 1), *RET0]) == "ctx_access_denied"

    def test_scalar_deref(self) -> None:
        assert rejected([I.mov64_imm(2, 0), I.ldx(op.BPF_W, 0, 2, 0), I.exit()]) == "invalid_mem_access"


class TestMaps:
    def test_lookup_without_null_check(self) -> None:
        insns = [*lookup_prefix(), I.ldx(op.BPF_DW, 0, 0, 0), I.exit()]
        assert rejected(insns, [ARRAY]) == "null_deref"

    def test_lookup_with_null_check(self) -> None:
        insns = [
            *lookup_prefix(),
            I.jmp_imm(op.BPF_JNE, 0, 0, 2),
            *RET0,
            I.ldx(op.BPF_DW, 1, 0, 0),
            *RET0,
        ]
        summary = verify(prog(insns), [ARRAY])
        assert summary.paths_explored == 2
        assert summary.helpers_called == [1]
        assert summary.maps_touched == [0]

    def test_value_out_of_bounds(self) -> None:
        insns = [
            *lookup_prefix(),
            I.jmp_imm(op.BPF_JNE, 0, 0, 2),
            *RET0,
            I.ldx(op.BPF_DW, 1, 0, 8),
            *RET0,
        ]
        assert rejected(insns, [ARRAY]) == "mem_oob"

    def test_uninitialized_key(self) -> None:
        insns = [*lookup_prefix()[1:], *RET0]
        assert rejected(insns, [ARRAY]) == "stack_uninit_read"

    def test_bad_map_reference(self) -> None:
        assert rejected([I.ld_map(1, 5), *RET0]) == "bad_map_ref"

    def test_map_not_usable_by_program_type(self) -> None:
        assert rejected([I.ld_map(1, 0), *RET0], [STORAGE], pt=ProgramTypeId.XDP) == "map_prog_incompat"

    def test_map_helper_mismatch(self) -> None:
        assert rejected([*reserve_prefix(), *RET0], [ARRAY]) == "map_func_incompat"


class TestHelpers:
    def test_unknown_helper(self) -> None:
        assert rejected([I.call(9999), *RET0]) == "unknown_helper"

    def test_unavailable_for_program_type(self) -> None:
        assert rejected([I.call(113), *RET0], pt=ProgramTypeId.XDP) == "helper_unavailable"

    def test_size_larger_than_buffer(self) -> None:
        insns = [
            I.mov64_reg(1, 10),
            I.alu64_imm(op.BPF_ADD, 1, -8),
            I.mov64_imm(2, 16),
            I.mov64_imm(3, 0),
            I.call(113),
            *RET0,
        ]
        assert rejected(insns, pt=ProgramTypeId.KPROBE) == "size_exceeds_mem"

    def test_probe_read_into_stack(self) -> None:
        insns = [
            I.mov64_reg(1, 10),
            I.alu64_imm(op.BPF_ADD, 1, -8),
            I.mov64_imm(2, 8),
            I.mov64_imm(3, 0),
            I.call(113),
            I.ldx(op.BPF_DW, 0, 10, -8),
            I.exit(),
        ]
        summary = verify(prog(insns, ProgramTypeId.KPROBE))
        assert summary.max_stack_depth == 8

    def test_argument_type_mismatch(self) -> None:
        insns = [I.mov64_imm(1, 0), I.call(12), *RET0]
        assert rejected(insns) == "arg_type_mismatch"

    def test_variable_alloc_size(self) -> None:
        insns = [I.call(7), I.ld_map(1, 0), I.mov64_reg(2, 0), I.mov64_imm(3, 0), I.call(131), *RET0]
        assert rejected(insns, [RINGBUF]) == "size_not_const"


class TestReferences:
    def test_reserve_submit(self) -> None:
        insns = [
            *reserve_prefix(),
            I.jmp_imm(op.BPF_JEQ, 0, 0, 4),
            I.st_imm(op.BPF_DW, 0, 0, 1),
            I.mov64_reg(1, 0),
            I.mov64_imm(2, 0),
            I.call(132),
            *RET0,
        ]
        summary = verify(prog(insns), [RINGBUF])
        assert summary.helpers_called == [131, 132]
        assert summary.paths_explored == 2

    def test_leaked_record(self) -> None:
        assert rejected([*reserve_prefix(), *RET0], [RINGBUF]) == "ref_leak"

    def test_write_past_reservation(self) -> None:
        insns = [
            *reserve_prefix(),
            I.jmp_imm(op.BPF_JEQ, 0, 0, 4),
            I.st_imm(op.BPF_DW, 0, 8, 1),
            I.mov64_reg(1, 0),
            I.mov64_imm(2, 0),
            I.call(132),
            *RET0,
        ]
        assert rejected(insns, [RINGBUF]) == "mem_oob"

    def test_use_after_submit(self) -> None:
        insns = [
            *reserve_prefix(),
            I.jmp_imm(op.BPF_JEQ, 0, 0, 7),
            I.mov64_reg(6, 0),
            I.mov64_reg(1, 0),
            I.mov64_imm(2, 0),
            I.call(132),
            I.mov64_reg(1, 6),
            I.mov64_imm(2, 0),
            I.call(133),
            *RET0,
        ]
        assert rejected(insns, [RINGBUF]) == "uninit_reg_read"


class TestScalarBounds:
    def test_add_constants(self) -> None:
        assert alu_bounds(op.BPF_ADD, Bounds.const(3), Bounds.const(4)) == Bounds.const(7)

    def test_add_ranges(self) -> None:
        b = alu_bounds(op.BPF_ADD, Bounds.unsigned(0, 10), Bounds.const(5))
        assert (b.umin, b.umax) == (5, 15)

    def test_and_narrows(self) -> None:
        b = alu_bounds(op.BPF_AND, Bounds.unknown(), Bounds.const(0xFF))
        assert b.umax == 0xFF

    def test_alu32_stays_in_32_bits(self) -> None:
        b = alu_bounds(op.BPF_ADD, Bounds.unknown(), Bounds.const(1), wide=False)
        assert b.umax <= 0xFFFFFFFF

    def test_refine_greater(self) -> None:
        taken, fall = refine(op.BPF_JGT, Bounds.unsigned(0, 100), Bounds.const(10), True), refine(
            op.BPF_JGT, Bounds.unsigned(0, 100), Bounds.const(10), False
        )
        assert taken[0].umin == 11
        assert fall[0].umax == 10

    def test_refine_impossible_branch(self) -> None:
        assert refine(op.BPF_JGT, Bounds.unsigned(0, 5), Bounds.const(10), True) is None

    @pytest.mark.parametrize("code", [op.BPF_ADD, op.BPF_SUB, op.BPF_MUL, op.BPF_AND, op.BPF_OR, op.BPF_XOR, op.BPF_RSH])
    def test_soundness_on_small_intervals(self, code: int) -> None:
        """Every concrete result of a small interval pair lies in the abstract result."""
        from domain.isa import alu

        for lo_a in range(0, 6, 2):
            for lo_b in range(0, 4):
                a = Bounds.unsigned(lo_a, lo_a + 3)
                b = Bounds.unsigned(lo_b, lo_b + 2)
                result = alu_bounds(code, a, b)
                for x in range(lo_a, lo_a + 4):
                    for y in range(lo_b, lo_b + 3):
                        assert result.contains(alu(code, x, y))


class TestService:
    def test_histogram_records_rejections(self) -> None:
        VerifierService.reset_stats()
        with pytest.raises(VerifierError):
            VerifierService.verify(prog([I.exit()]))
        assert VerifierService.histogram["r0_uninit"] == 1
        assert VerifierService.histogram.top(1) == [("r0_uninit", 1)]

    def test_bytecode_error_conversion(self) -> None:
        err = from_bytecode_error(BytecodeError("truncated_insn", 3, "truncated"))
        assert err.category is ErrorCategory.SYNTAX
        assert err.rule_id == "truncated_insn"
        assert err.insn_index == 3


CTX = "ctx"
SMALL_REGS = (0, 1, 2)


def small_alphabet() -> list[I]:
    insns = [I.mov64_imm(r, k) for r in SMALL_REGS for k in (0, 1)]
    insns += [I.alu64_reg(code, d, s) for code in (op.BPF_MOV, op.BPF_ADD, op.BPF_SUB) for d in SMALL_REGS for s in SMALL_REGS]
    insns += [I.jmp_imm(op.BPF_JEQ, d, 0, off) for d in SMALL_REGS for off in (-1, 0, 1)]
    insns += [I.jmp_reg(op.BPF_JEQ, d, s, off) for d in SMALL_REGS for s in SMALL_REGS for off in (0, 1)]
    insns += [I.ja(off) for off in (-1, 0, 1)]
    insns.append(I.exit())
    return insns


def _is_branch(insn: I) -> bool:
    return insn.opcode & 0x07 == op.BPF_JMP and insn.opcode != op.EXIT


def reference_accepts(insns: list[I]) -> bool:
    """Independent model for the small alphabet: structural checks, then every concrete path."""
    n = len(insns)

    def target(index: int) -> int | None:
        t = index + 1 + insns[index].offset
        return t if 0 <= t < n else None

    def successors(index: int) -> list[int]:
        insn = insns[index]
        if insn.opcode == op.EXIT:
            return []
        if insn.opcode == op.JA:
            return [target(index)]
        nxt = [index + 1] if index + 1 < n else []
        return nxt + [target(index)] if _is_branch(insn) else nxt

    if any(_is_branch(insn) and target(i) is None for i, insn in enumerate(insns)):
        return False
    if insns[-1].opcode not in (op.EXIT, op.JA):
        return False

    def acyclic(index: int, on_path: frozenset[int]) -> bool:
        return all(s not in on_path and acyclic(s, on_path | {s}) for s in successors(index))

    if not acyclic(0, frozenset({0})):
        return False
    reachable, todo = {0}, [0]
    while todo:
        for s in successors(todo.pop()):
            if s not in reachable:
                reachable.add(s)
                todo.append(s)
    if len(reachable) != n:
        return False

    def walk(index: int, regs: dict[int, int | str]) -> bool:
        insn = insns[index]
        if insn.opcode == op.EXIT:
            return 0 in regs and regs[0] != CTX
        if insn.opcode == op.JA:
            return walk(target(index), regs)
        code = insn.opcode & 0xF0
        if insn.cls == op.BPF_ALU64:
            if not insn.opcode & op.BPF_X:
                return walk(index + 1, {**regs, insn.dst_reg: insn.imm & op.U64_MAX})
            if insn.src_reg not in regs:
                return False
            if code == op.BPF_MOV:
                return walk(index + 1, {**regs, insn.dst_reg: regs[insn.src_reg]})
            if insn.dst_reg not in regs:
                return False
            a, b = regs[insn.dst_reg], regs[insn.src_reg]
            if CTX in (a, b):
                return False
            value = (a + b if code == op.BPF_ADD else a - b) & op.U64_MAX
            return walk(index + 1, {**regs, insn.dst_reg: value})
        if insn.dst_reg not in regs:
            return False
        a = regs[insn.dst_reg]
        if insn.opcode & op.BPF_X:
            if insn.src_reg not in regs:
                return False
            b = regs[insn.src_reg]
        else:
            b = insn.imm
        if CTX in (a, b):
            if a != b and 0 not in (a, b):
                return False
            return walk(target(index), regs) and walk(index + 1, regs)
        return walk(target(index) if a == b else index + 1, regs)

    return walk(0, {1: CTX})


@pytest.mark.slow
class TestExhaustiveSmallPrograms:
    """Accept/reject matches an independent path-by-path model on every short program."""

    def test_all_programs_up_to_three_insns(self) -> None:
        alphabet = small_alphabet()
        counts = {True: 0, False: 0}
        mismatches = []
        for length in (1, 2, 3):
            for combo in itertools.product(alphabet, repeat=length):
                insns = list(combo)
                try:
                    verify(prog(insns))
                    accepted = True
                except VerifierError:
                    accepted = False
                counts[accepted] += 1
                if accepted != reference_accepts(insns):
                    mismatches.append([insn.name for insn in insns])
        assert mismatches[:5] == []
        assert counts[True] > 100 and counts[False] > 100


RANDOM_HELPER = 7
VALUE_REGS = (6, 7, 8, 9)
ALU_CODES = (
    op.BPF_ADD, op.BPF_SUB, op.BPF_MUL, op.BPF_DIV, op.BPF_MOD, op.BPF_OR, op.BPF_AND,
    op.BPF_XOR, op.BPF_LSH, op.BPF_RSH, op.BPF_ARSH, op.BPF_NEG, op.BPF_MOV,
)
EDGE_IMMS = (0, 1, 2, 3, 7, 0xFF, 0xFFFF, 0x7FFFFFFF, -1, -2, -0x80000000)
EDGE_INPUTS = (0, 1, 2, 0xFF, 0x7FFFFFFF, 0x80000000, 0xFFFFFFFE, 0xFFFFFFFF)


def random_alu_program(rng: random.Random) -> list[I]:
    insns = [
        I.call(RANDOM_HELPER),
        I.mov64_reg(6, 0),
        I.call(RANDOM_HELPER),
        I.mov64_reg(7, 0),
        I.mov64_imm(8, rng.choice(EDGE_IMMS)),
        I.mov64_imm(9, rng.choice(EDGE_IMMS)),
    ]
    for _ in range(rng.randint(1, 12)):
        code = rng.choice(ALU_CODES)
        wide = rng.random() < 0.6
        dst = rng.choice(VALUE_REGS)
        if code == op.BPF_NEG:
            insns.append(I.alu64_imm(code, dst, 0) if wide else I.alu32_imm(code, dst, 0))
            continue
        if rng.random() < 0.5:
            src = rng.choice(VALUE_REGS)
            insns.append(I.alu64_reg(code, dst, src) if wide else I.alu32_reg(code, dst, src))
            continue
        if code in (op.BPF_LSH, op.BPF_RSH, op.BPF_ARSH):
            imm = rng.randrange(64 if wide else 32)
        elif code in (op.BPF_DIV, op.BPF_MOD):
            imm = rng.choice([k for k in EDGE_IMMS if k])
        else:
            imm = rng.choice(EDGE_IMMS)
        insns.append(I.alu64_imm(code, dst, imm) if wide else I.alu32_imm(code, dst, imm))
    return [*insns, I.mov64_imm(0, 0), I.exit()]


def concrete_trace(insns: list[I], inputs: list[int]) -> list[dict[int, int]]:
    """Register values before each instruction of a straight-line program."""
    pending = list(inputs)
    regs: dict[int, int] = {}
    trace = []
    for insn in insns:
        trace.append(dict(regs))
        if insn.opcode == op.CALL:
            regs[0] = pending.pop(0)
        elif insn.cls in (op.BPF_ALU, op.BPF_ALU64):
            src = regs[insn.src_reg] if insn.opcode & op.BPF_X else insn.imm
            regs[insn.dst_reg] = alu(insn.opcode & 0xF0, regs.get(insn.dst_reg, 0), src, wide=insn.cls == op.BPF_ALU64)
    return trace


class TestBoundsSoundness:
    def test_random_alu_programs(self) -> None:
        """Concrete register values stay inside the tracked bounds at every instruction."""
        rng = random.Random(20240611)
        accepted = 0
        for _ in range(1000):
            insns = random_alu_program(rng)
            observed: dict[int, list] = {}
            try:
                verify(prog(insns), observer=lambda index, state: observed.setdefault(index, list(state.regs)))
            except VerifierError as exc:
                assert exc.rule_id in ("div_by_zero", "invalid_shift"), [i.name for i in insns]
                continue
            accepted += 1
            assert sorted(observed) == list(range(len(insns)))
            pairs = [(a, b) for a in EDGE_INPUTS for b in EDGE_INPUTS if rng.random() < 0.15]
            pairs += [(rng.getrandbits(32), rng.getrandbits(32)) for _ in range(4)]
            for inputs in pairs:
                for index, regs in enumerate(concrete_trace(insns, list(inputs))):
                    tracked = observed[index]
                    for regno in VALUE_REGS:
                        if regno not in regs:
                            continue
                        assert tracked[regno].is_scalar
                        assert tracked[regno].bounds.contains(regs[regno]), (index, regno, regs[regno], [i.name for i in insns])
                    prev = insns[index - 1] if index else None
                    if prev is not None and prev.cls == op.BPF_ALU:
                        assert tracked[prev.dst_reg].umax <= op.U32_MAX
        assert accepted >= 600
