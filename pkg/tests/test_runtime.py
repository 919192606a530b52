"""Tests for the simulated kernel: maps, syscalls, helpers, both engines, oracles and seeded bugs."""

import random

import pytest

from domain.astgen import AstgenService, ProgramAst, deserialize_ast, serialize_ast
from domain.catalog import AttachKind, MapSpecRequest, MapTypeId, ProgramTypeId
from domain.harness import TriggerCall, TriggerKind, build_input, execute_input
from domain.isa import Instruction as I, RawProgram, opcodes as op
from domain.lower import compile_ast
from domain.runtime import (
    BPF_EXIST,
    BPF_NOEXIST,
    HELPER_IMPLS,
    AcquireContext,
    CoverageMap,
    Engine,
    Execution,
    LockContextTracker,
    Oracle,
    RuntimeService,
    SeededBug,
    SimKernel,
    SyscallError,
    build_context,
    evaluate_ast,
    exec_linear,
    interpret,
    lockdep_check,
    parse_seeded_bugs,
    probe_id,
)
from domain.runtime.types import E2BIG, EBUSY, EEXIST, EFAULT, ENOENT, neg
from domain.verifier import VerifierError

ARRAY = MapSpecRequest(map_type=MapTypeId.ARRAY, key_size=4, value_size=8, max_entries=4)
HASH = MapSpecRequest(map_type=MapTypeId.HASH, key_size=4, value_size=8, max_entries=2)
QUEUE = MapSpecRequest(map_type=MapTypeId.QUEUE, key_size=0, value_size=8, max_entries=2)

TAIL_CALL = """\
program SOCKET_FILTER
map 0 PROG_ARRAY key=4 value=4 entries=4 flags=0x0
call v0 = tail_call(ctx, &map_0, {index})
return 7
"""

RINGBUF_DISCARD = """\
program SOCKET_FILTER
map 0 RINGBUF key=0 value=0 entries=4096 flags=0x0
call v0 = ringbuf_reserve(&map_0, 16, 0)
if v0 != null {
  call ringbuf_discard(v0, 0)
}
return 0
"""

LRU_LOOKUP = """\
program SOCKET_FILTER
map 0 LRU_HASH key=4 value=8 entries=4 flags=0x0
buf v0 4
call v1 = map_lookup_elem(&map_0, v0)
return 0
"""

VARIABLE_SHIFT = """\
program SOCKET_FILTER
let v0 = 1
call v1 = get_prandom_u32()
arith v2 = v0 lsh v1
return v2
"""

QUEUE_PUSH = """\
program KPROBE
map 0 QUEUE key=0 value=8 entries=4 flags=0x0
buf v0 8
call v1 = map_push_elem(&map_0, v0, 0)
return 0
"""

USE_AFTER_DELETE = """\
program SOCKET_FILTER
map 0 HASH key=4 value=8 entries=4 flags=0x0
buf v0 8
call v1 = map_update_elem(&map_0, v0, v0, 0)
call v2 = map_lookup_elem(&map_0, v0)
call v3 = map_delete_elem(&map_0, v0)
if v2 != null {
  call v4 = map_update_elem(&map_0, v0, v2, 0)
}
return 0
"""


def key(index: int) -> bytes:
    return index.to_bytes(4, "little")


def run_text(text: str, *, bugs: str = "none", engine: Engine = Engine.INTERP, payload: bytes = b"", catalog=None):
    return RuntimeService.run(
        deserialize_ast(text), payload, engine=engine, seeded_bugs=parse_seeded_bugs(bugs), catalog=catalog
    )


def oracles(result) -> set[Oracle]:
    return {finding.oracle for finding in result.oracle_findings}


class TestSeededBugParsing:
    def test_names(self) -> None:
        assert parse_seeded_bugs("none") == frozenset()
        assert parse_seeded_bugs(None) == frozenset()
        assert parse_seeded_bugs("all") == frozenset(SeededBug)
        assert parse_seeded_bugs("shift_ub, ringbuf_leak") == {SeededBug.SHIFT_UB, SeededBug.RINGBUF_LEAK}

    def test_unknown_name(self) -> None:
        with pytest.raises(ValueError, match="unknown seeded bug"):
            parse_seeded_bugs("shift_ub,bogus")


class TestMaps:
    """Map behaviour through the user-side syscalls."""

    def test_create_rejects_bad_attributes(self, kernel: SimKernel) -> None:
        bad = MapSpecRequest(map_type=MapTypeId.ARRAY, key_size=8, value_size=8, max_entries=4)
        with pytest.raises(SyscallError) as exc:
            kernel.sys_map_create(bad)
        assert exc.value.code == "attr_invalid"

    def test_ids_are_sequential(self, kernel: SimKernel) -> None:
        assert [kernel.sys_map_create(ARRAY) for _ in range(3)] == [1, 2, 3]

    def test_unknown_map(self, kernel: SimKernel) -> None:
        with pytest.raises(SyscallError) as exc:
            kernel.map_lookup(99, key(0))
        assert exc.value.code == "no_such_map"

    def test_array(self, kernel: SimKernel) -> None:
        m = kernel.sys_map_create(ARRAY)
        assert kernel.map_lookup(m, key(1)) == bytes(8)
        assert kernel.map_update(m, key(1), b"\x01" * 8) == 0
        assert kernel.map_lookup(m, key(1)) == b"\x01" * 8
        assert kernel.map_update(m, key(4), b"\x01" * 8) == neg(E2BIG)
        assert kernel.map_update(m, key(0), b"\x02" * 8, BPF_NOEXIST) == neg(EEXIST)
        assert kernel.map_lookup(m, key(9)) is None

    def test_hash(self, kernel: SimKernel) -> None:
        m = kernel.sys_map_create(HASH)
        assert kernel.map_lookup(m, key(1)) is None
        assert kernel.map_update(m, key(1), b"a" * 8, BPF_EXIST) == neg(ENOENT)
        assert kernel.map_update(m, key(1), b"a" * 8) == 0
        assert kernel.map_update(m, key(1), b"b" * 8, BPF_NOEXIST) == neg(EEXIST)
        assert kernel.map_update(m, key(2), b"c" * 8) == 0
        assert kernel.map_update(m, key(3), b"d" * 8) == neg(E2BIG)
        assert kernel.map_delete(m, key(1)) == 0
        assert kernel.map_delete(m, key(1)) == neg(ENOENT)

    def test_queue_is_fifo(self, kernel: SimKernel) -> None:
        m = kernel.sys_map_create(QUEUE)
        assert kernel.map_push(m, b"1" * 8) == 0
        assert kernel.map_push(m, b"2" * 8) == 0
        assert kernel.map_push(m, b"3" * 8) == neg(E2BIG)
        assert kernel.map_push(m, b"3" * 8, BPF_EXIST) == 0
        assert kernel.map_pop(m) == b"2" * 8
        assert kernel.map_pop(m) == b"3" * 8
        assert kernel.map_pop(m) is None

    def test_queue_ops_on_array(self, kernel: SimKernel) -> None:
        m = kernel.sys_map_create(ARRAY)
        with pytest.raises(SyscallError) as exc:
            kernel.map_push(m, b"x" * 8)
        assert exc.value.code == "attr_invalid"


class TestPrograms:
    """Loading, attaching and running programs."""

    def test_load_and_test_run(self, kernel: SimKernel) -> None:
        prog = RawProgram(int(ProgramTypeId.SOCKET_FILTER), "socket", [I.mov64_imm(0, 42), I.exit()])
        prog_id = kernel.sys_prog_load(prog)
        result = kernel.sys_test_run(prog_id, b"payload")
        assert result.return_value == 42
        assert not result.aborted
        assert kernel.load_stats.loads_succeeded == 1

    def test_rejected_load_counts_rule(self, kernel: SimKernel) -> None:
        prog = RawProgram(int(ProgramTypeId.SOCKET_FILTER), "socket", [I.exit()])
        with pytest.raises(VerifierError) as exc:
            kernel.sys_prog_load(prog)
        assert kernel.load_stats.rejections[exc.value.rule_id] == 1
        assert kernel.load_stats.loads_succeeded == 0

    def test_test_run_unsupported(self, kernel: SimKernel) -> None:
        prog_id = kernel.load_stub(ProgramTypeId.KPROBE, 1)
        with pytest.raises(SyscallError) as exc:
            kernel.sys_test_run(prog_id)
        assert exc.value.code == "test_run_unsupported"

    def test_attach_checks(self, kernel: SimKernel) -> None:
        prog_id = kernel.load_stub(ProgramTypeId.SOCKET_FILTER, 1)
        with pytest.raises(SyscallError) as exc:
            kernel.sys_prog_attach(prog_id, AttachKind.TRACE_EVENT)
        assert exc.value.code == "attach_type_mismatch"
        with pytest.raises(SyscallError) as exc:
            kernel.sys_prog_attach(prog_id, AttachKind.SOCKET)
        assert exc.value.code == "attach_target_missing"
        with pytest.raises(SyscallError) as exc:
            kernel.sys_prog_attach(prog_id, AttachKind.SOCKET, 77)
        assert exc.value.code == "no_such_target"
        with pytest.raises(SyscallError) as exc:
            kernel.sys_prog_attach(99, AttachKind.SOCKET)
        assert exc.value.code == "no_such_prog"

    def test_trigger_runs_attached_programs(self, kernel: SimKernel) -> None:
        first = kernel.load_stub(ProgramTypeId.KPROBE, 3)
        second = kernel.load_stub(ProgramTypeId.TRACEPOINT, 4)
        kernel.sys_prog_attach(first, AttachKind.TRACE_EVENT)
        kernel.sys_prog_attach(second, AttachKind.TRACE_EVENT)
        results = kernel.trigger_event(AttachKind.TRACE_EVENT, b"")
        assert [r.return_value for r in results] == [3, 4]

    def test_context_fields(self, catalog) -> None:
        text = "program SOCKET_FILTER\nctx v0 len\nreturn v0\n"
        assert run_text(text, payload=b"x" * 37, catalog=catalog).return_value == 37

    def test_event_program_through_service(self, catalog) -> None:
        text = "program KPROBE\ncall v0 = get_current_pid_tgid()\nreturn 1\n"
        result = run_text(text, catalog=catalog)
        assert result.return_value == 1
        assert len(result.helper_trace) == 1

    def test_tail_call_to_stub(self, catalog) -> None:
        result = run_text(TAIL_CALL.format(index=1), catalog=catalog)
        assert result.return_value == 2
        assert probe_id("exec:tail_call") in result.coverage_delta

    def test_tail_call_out_of_range(self, catalog) -> None:
        result = run_text(TAIL_CALL.format(index=8), catalog=catalog)
        assert result.return_value == 7
        assert not result.oracle_findings


class TestEngines:
    """Interpreter, linear engine and AST evaluator agree."""

    def test_module_level_helpers(self, kernel: SimKernel) -> None:
        prog = RawProgram(int(ProgramTypeId.SOCKET_FILTER), "socket", [I.mov64_imm(0, 5), I.alu64_imm(op.BPF_MUL, 0, 3), I.exit()])
        prog_id = kernel.sys_prog_load(prog)
        assert interpret(prog_id, b"", kernel).return_value == 15
        assert exec_linear(prog_id, b"", kernel).return_value == 15
        assert kernel.engine is Engine.INTERP

    def test_generated_programs_agree(self, catalog) -> None:
        checked = 0
        for seed in range(30):
            ast = AstgenService.generate(seed, catalog=catalog)
            try:
                result = RuntimeService.run(ast, bytes(range(64)), engine=Engine.BOTH, catalog=catalog)
            except (VerifierError, SyscallError):
                continue
            checked += 1
            assert result.oracle_findings == [], seed
        assert checked >= 20

    def test_evaluator_matches_interpreter(self, catalog) -> None:
        checked = 0
        for seed in range(30):
            ast = AstgenService.generate(seed, catalog=catalog)
            kernel = SimKernel(catalog=catalog, seed=seed)
            try:
                prepared = RuntimeService.prepare(kernel, ast)
            except VerifierError:
                continue
            twin = kernel.snapshot()
            payload = bytes(range(64))
            by_ast = evaluate_ast(ast, prepared.prog_id, payload, kernel, prepared.handles)
            by_bytecode = twin.execute(prepared.prog_id, payload)
            if by_ast.aborted or by_bytecode.aborted:
                continue
            checked += 1
            assert by_ast.observables() == by_bytecode.observables()
            assert kernel.map_digest() == twin.map_digest()
        assert checked >= 15


class TestSeededBugs:
    """Each injected defect is caught by its oracle and is silent when disabled."""

    def test_tailcall_oob(self, catalog) -> None:
        result = run_text(TAIL_CALL.format(index=8), bugs="tailcall_oob", catalog=catalog)
        assert Oracle.OOB_ACCESS in oracles(result)
        assert any(f.location == "helper:tail_call" for f in result.oracle_findings)

    def test_ringbuf_leak(self, catalog) -> None:
        assert not run_text(RINGBUF_DISCARD, catalog=catalog).oracle_findings
        result = run_text(RINGBUF_DISCARD, bugs="ringbuf_leak", catalog=catalog)
        assert Oracle.REF_LEAK_RUNTIME in oracles(result)

    def test_lookup_null_passthrough(self, catalog) -> None:
        assert not run_text(LRU_LOOKUP, catalog=catalog).oracle_findings
        result = run_text(LRU_LOOKUP, bugs="lookup_null_passthrough", catalog=catalog)
        assert Oracle.NULL_DEREF in oracles(result)

    def test_shift_ub_diverges(self, catalog) -> None:
        assert Oracle.EXEC_DIVERGENCE not in oracles(run_text(VARIABLE_SHIFT, engine=Engine.BOTH, catalog=catalog))
        result = run_text(VARIABLE_SHIFT, bugs="shift_ub", engine=Engine.BOTH, catalog=catalog)
        assert any(f.location == "engine:return" for f in result.oracle_findings)

    @pytest.mark.parametrize(("bugs", "expected"), [("none", False), ("queue_lock_ctx", True)])
    def test_queue_lock_ctx(self, catalog, bugs: str, expected: bool) -> None:
        kernel = SimKernel(catalog=catalog, seeded_bugs=parse_seeded_bugs(bugs))
        prepared = RuntimeService.prepare(kernel, deserialize_ast(QUEUE_PUSH))
        kernel.sys_prog_attach(prepared.prog_id, AttachKind.TRACE_EVENT)
        findings = []
        for interrupt in (False, True):
            for result in kernel.trigger_event(AttachKind.TRACE_EVENT, b"", interrupt=interrupt):
                findings.extend(result.oracle_findings)
        found = any(f.oracle is Oracle.LOCK_CONTEXT_VIOLATION and f.location == "lock:queue_lock" for f in findings)
        assert found is expected


class TestLockdep:
    def test_irq_unsafe_and_interrupt_use(self) -> None:
        tracker = LockContextTracker()
        with tracker.hold("a", AcquireContext.TASK_IRQ_ON):
            pass
        assert lockdep_check(tracker) == []
        with tracker.hold("a", AcquireContext.INTERRUPT):
            pass
        reports = lockdep_check(tracker)
        assert [r.location for r in reports] == ["lock:a"]
        assert lockdep_check(tracker) == []

    def test_order_cycle(self) -> None:
        tracker = LockContextTracker()
        with tracker.hold("a", AcquireContext.IRQ_OFF):
            with tracker.hold("b", AcquireContext.IRQ_OFF):
                pass
        with tracker.hold("b", AcquireContext.IRQ_OFF):
            with tracker.hold("a", AcquireContext.IRQ_OFF):
                pass
        assert tracker.cycles() == [["a", "b"]]
        assert [r.location for r in lockdep_check(tracker)] == ["lock_cycle:a->b"]

    def test_irq_saving_locks_are_quiet(self) -> None:
        tracker = LockContextTracker()
        for ctx in (AcquireContext.IRQ_OFF, AcquireContext.INTERRUPT):
            with tracker.hold("a", ctx):
                pass
        assert tracker.violations() == []


class TestCoverage:
    def test_merge_is_idempotent(self) -> None:
        a, b = CoverageMap(), CoverageMap()
        b.hit([1, 2, 2])
        assert a.merge(b) == [1, 2]
        assert a.merge(b) == []
        assert a.covered == 2

    def test_runs_hit_probes(self, kernel: SimKernel) -> None:
        m = kernel.sys_map_create(ARRAY)
        text = (
            "program SOCKET_FILTER\n"
            "map 0 ARRAY key=4 value=8 entries=4 flags=0x0\n"
            "buf v0 4\n"
            "call v1 = map_lookup_elem(&map_0, v0)\n"
            "return 0\n"
        )
        ast: ProgramAst = deserialize_ast(text)
        prog_id = kernel.sys_prog_load(compile_ast(ast, kernel.catalog), {0: m})
        result = kernel.sys_test_run(prog_id)
        assert probe_id("helper:map_lookup_elem") in result.coverage_delta
        assert probe_id("map:ARRAY:lookup:hit") in result.coverage_delta
        assert "map:ARRAY:lookup:hit" in kernel.coverage.covered_names()


class TestDeferredFree:
    """Deleted and evicted hash values stay readable until the kernel goes away."""

    def test_deleted_value_stays_mapped(self, kernel: SimKernel) -> None:
        m = kernel.sys_map_create(HASH)
        assert kernel.map_update(m, key(1), b"a" * 8) == 0
        address = kernel.maps[m].lookup(None, key(1))
        assert kernel.map_delete(m, key(1)) == 0
        assert kernel.map_lookup(m, key(1)) is None
        assert kernel.memory.read(address, 8) == b"a" * 8

    def test_evicted_value_stays_mapped(self, kernel: SimKernel) -> None:
        lru = kernel.sys_map_create(MapSpecRequest(map_type=MapTypeId.LRU_HASH, key_size=4, value_size=8, max_entries=4))
        assert kernel.map_update(lru, key(0), b"z" * 8) == 0
        address = kernel.maps[lru].lookup(None, key(0))
        for index in range(1, 5):
            assert kernel.map_update(lru, key(index), b"y" * 8) == 0
        assert kernel.map_lookup(lru, key(0)) is None
        kernel.memory.write(address, b"w" * 8)
        assert kernel.memory.read(address, 8) == b"w" * 8

    @pytest.mark.parametrize("engine", [Engine.INTERP, Engine.LINEAR, Engine.BOTH])
    def test_lookup_pointer_used_after_delete(self, catalog, engine: Engine) -> None:
        result = run_text(USE_AFTER_DELETE, engine=engine, catalog=catalog)
        assert result.oracle_findings == []
        assert result.return_value == 0


class TestHelperFailures:
    """Failing copy helpers zero their destination."""

    @staticmethod
    def execution(kernel: SimKernel, prog_type: ProgramTypeId, *, interrupt: bool = False) -> Execution:
        prog = kernel.programs[kernel.load_stub(prog_type, 0)]
        return Execution(kernel, prog, build_context(kernel, prog.prog_type, b"abcd"), engine=Engine.INTERP, interrupt=interrupt)

    def test_skb_load_bytes_out_of_packet(self, kernel: SimKernel) -> None:
        ex = self.execution(kernel, ProgramTypeId.SOCKET_FILTER)
        dst = kernel.memory.map("dst", "stack", 16, data=b"\xff" * 16)
        assert HELPER_IMPLS["skb_load_bytes"](ex, [ex.ctx_address, 2, dst.base, 8, 0]) == neg(EFAULT)
        assert bytes(dst.data) == bytes(8) + b"\xff" * 8
        assert HELPER_IMPLS["skb_load_bytes"](ex, [ex.ctx_address, 1, dst.base, 2, 0]) == 0
        assert bytes(dst.data[:2]) == b"bc"

    def test_user_copy_in_interrupt(self, kernel: SimKernel) -> None:
        ex = self.execution(kernel, ProgramTypeId.KPROBE, interrupt=True)
        dst = kernel.memory.map("dst", "stack", 16, data=b"\xff" * 16)
        assert HELPER_IMPLS["probe_read_user"](ex, [dst.base, 16, kernel.user_arena.base, 0, 0]) == neg(EBUSY)
        assert bytes(dst.data) == bytes(16)

    def test_kernel_copy_bad_source(self, kernel: SimKernel) -> None:
        ex = self.execution(kernel, ProgramTypeId.KPROBE)
        dst = kernel.memory.map("dst", "stack", 16, data=b"\xff" * 16)
        assert HELPER_IMPLS["probe_read_kernel"](ex, [dst.base, 16, 0, 0, 0]) == neg(EFAULT)
        assert bytes(dst.data) == bytes(16)
        arena = kernel.kernel_arena
        assert HELPER_IMPLS["probe_read_kernel"](ex, [dst.base, 16, arena.base, 0, 0]) == 0
        assert bytes(dst.data) == bytes(arena.data[:16])


@pytest.mark.slow
class TestGeneratedSoundness:
    """Accepted programs never trip a runtime oracle when no defect is seeded."""

    SEEDS_PER_TYPE = 60

    @pytest.mark.parametrize("prog_type", list(ProgramTypeId), ids=lambda pt: pt.name.lower())
    def test_accepted_inputs_are_clean(self, catalog, prog_type: ProgramTypeId) -> None:
        checked = 0
        for seed in range(self.SEEDS_PER_TYPE):
            rng = random.Random(seed)
            ast = AstgenService.generate(seed, prog_type, catalog=catalog)
            inp = build_input(ast, rng, catalog=catalog)
            if catalog.program(prog_type).attach_kind is AttachKind.TRACE_EVENT:
                inp.triggers.append(TriggerCall(TriggerKind.EVENT, bytes(range(64)), interrupt=True))
            outcome = execute_input(inp, SimKernel(catalog=catalog, seed=seed, engine=Engine.BOTH))
            assert all(record.call != "internal" for record in outcome.call_log)
            if not outcome.executed:
                continue
            checked += 1
            assert outcome.bugs == [], (seed, [b.location for b in outcome.bugs], serialize_ast(ast))
        assert checked >= self.SEEDS_PER_TYPE // 2
