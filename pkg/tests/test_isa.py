"""Tests for the instruction codec, slot layout and ALU/jump semantics."""

import pytest

from domain.isa import (
    BytecodeError,
    Instruction,
    RawProgram,
    RelocationRecord,
    SlotMap,
    alu,
    decode_program,
    disassemble,
    encode_instruction,
    encode_program,
    jmp_taken,
    opcodes as op,
)


class TestCodec:
    """Encoding and decoding of 8-byte instruction units."""

    def test_mov_layout(self) -> None:
        data = encode_instruction(Instruction.mov64_imm(1, -2))
        assert data == bytes([0xB7, 0x01, 0x00, 0x00, 0xFE, 0xFF, 0xFF, 0xFF])

    def test_register_nibbles(self) -> None:
        data = encode_instruction(Instruction.stx(op.BPF_DW, 10, 3, -8))
        assert data[1] == (3 << 4) | 10
        assert int.from_bytes(data[2:4], "little", signed=True) == -8

    def test_ld_imm64_takes_two_slots(self) -> None:
        insn = Instruction.ld_imm64(2, 0x1122334455667788)
        data = encode_instruction(insn)
        assert len(data) == 16
        assert data[8:12] == b"\x00\x00\x00\x00"
        decoded = decode_program(data)
        assert decoded == [insn]

    def test_program_decodes_back(self) -> None:
        insns = [
            Instruction.mov64_imm(0, 0),
            Instruction.ld_map(1, 3),
            Instruction.jmp_imm(op.BPF_JEQ, 0, 0, 1),
            Instruction.call(1),
            Instruction.exit(),
        ]
        assert decode_program(encode_program(insns)) == insns

    def test_empty_program(self) -> None:
        with pytest.raises(BytecodeError) as exc:
            decode_program(b"")
        assert exc.value.rule_id == "empty_program"

    def test_truncated(self) -> None:
        with pytest.raises(BytecodeError) as exc:
            decode_program(b"\x95" + b"\x00" * 6)
        assert exc.value.rule_id == "truncated_insn"

    def test_incomplete_ld_imm64(self) -> None:
        data = encode_instruction(Instruction.ld_imm64(1, 5))[:8]
        with pytest.raises(BytecodeError) as exc:
            decode_program(data)
        assert exc.value.rule_id == "incomplete_ld_imm64"

    def test_bad_second_slot(self) -> None:
        data = bytearray(encode_instruction(Instruction.ld_imm64(1, 5)))
        data[8] = 0x07
        with pytest.raises(BytecodeError) as exc:
            decode_program(bytes(data))
        assert exc.value.rule_id == "bad_ld_imm64"

    def test_unknown_opcode(self) -> None:
        with pytest.raises(BytecodeError) as exc:
            decode_program(bytes([0xFF, 0, 0, 0, 0, 0, 0, 0]))
        assert exc.value.rule_id == "unknown_opcode"

    def test_bad_register(self) -> None:
        with pytest.raises(BytecodeError) as exc:
            decode_program(bytes([0xB7, 0x0B, 0, 0, 0, 0, 0, 0]))
        assert exc.value.rule_id == "bad_register"

    def test_encode_rejects_register_out_of_range(self) -> None:
        with pytest.raises(BytecodeError) as exc:
            encode_instruction(Instruction.mov64_imm(11, 0))
        assert exc.value.rule_id == "bad_register"

    def test_encode_rejects_wide_imm_on_narrow_op(self) -> None:
        with pytest.raises(BytecodeError) as exc:
            encode_instruction(Instruction(op.EXIT, wide_imm=1))
        assert exc.value.rule_id == "bad_wide_imm"

    def test_decode_arbitrary_bytes_only_raises_bytecode_error(self) -> None:
        blob = bytes(range(256)) * 2
        for start in range(0, len(blob) - 16, 8):
            try:
                decode_program(blob[start : start + 16])
            except BytecodeError:
                pass


class TestSlotMap:
    def test_jump_over_wide_insn(self) -> None:
        insns = [
            Instruction.jmp_imm(op.BPF_JEQ, 1, 0, 2),
            Instruction.ld_imm64(2, 7),
            Instruction.exit(),
        ]
        slots = SlotMap(insns)
        assert slots.slot_of == [0, 1, 3]
        assert slots.target(0, 2) == 2
        assert slots.target(0, 1) is None
        assert slots.offset_to(0, 2) == 2

    def test_relocation_must_point_at_ld_imm64(self) -> None:
        with pytest.raises(BytecodeError):
            RawProgram(1, "socket", [Instruction.exit()], [RelocationRecord(0, 0)])


class TestSemantics:
    """Kernel interpreter arithmetic conventions."""

    def test_div_by_zero_is_zero(self) -> None:
        assert alu(op.BPF_DIV, 10, 0) == 0

    def test_mod_by_zero_keeps_dividend(self) -> None:
        assert alu(op.BPF_MOD, 10, 0) == 10

    def test_alu32_zero_extends(self) -> None:
        assert alu(op.BPF_ADD, 0xFFFFFFFF, 1, wide=False) == 0
        assert alu(op.BPF_SUB, 0, 1, wide=False) == 0xFFFFFFFF

    def test_shift_amount_masked(self) -> None:
        assert alu(op.BPF_LSH, 1, 65) == 2
        assert alu(op.BPF_LSH, 1, 33, wide=False) == 2

    def test_arsh_sign_fills(self) -> None:
        assert alu(op.BPF_ARSH, 1 << 63, 63) == (1 << 64) - 1

    def test_neg(self) -> None:
        assert alu(op.BPF_NEG, 1, 0) == (1 << 64) - 1

    @pytest.mark.parametrize(
        ("jop", "a", "b", "taken"),
        [
            (op.BPF_JGT, (1 << 64) - 1, 1, True),
            (op.BPF_JSGT, (1 << 64) - 1, 1, False),
            (op.BPF_JSLT, (1 << 64) - 1, 0, True),
            (op.BPF_JSET, 0b1010, 0b0100, False),
            (op.BPF_JLE, 3, 3, True),
        ],
    )
    def test_jumps(self, jop: int, a: int, b: int, taken: bool) -> None:
        assert jmp_taken(jop, a, b) is taken


class TestDisassembly:
    def test_stable_listing(self) -> None:
        insns = [
            Instruction.ld_map(1, 0),
            Instruction.mov64_reg(2, 10),
            Instruction.alu64_imm(op.BPF_ADD, 2, -8),
            Instruction.call(1),
            Instruction.exit(),
        ]
        text = disassemble(insns, {1: "map_lookup_elem"})
        assert text.splitlines() == [
            "r1 = map[0] ll",
            "r2 = r10",
            "r2 += -8",
            "call bpf_map_lookup_elem",
            "exit",
        ]
