import logging

from domain.lower import CompileError, LoadError, compile_ast
from domain.runtime import BugReport, ExecResult, SimKernel, SyscallError
from domain.verifier import VerifierError

from .types import AuxCall, AuxKind, CallRecord, Expressiveness, FuzzInput, InputOutcome, TriggerKind

logger = logging.getLogger(__name__)


def _run_aux(kernel: SimKernel, call: AuxCall, handles: dict[int, int], prog_type) -> str:
    map_id = handles.get(call.map_ordinal)
    if map_id is None:
        raise SyscallError("no_such_map", f"map ordinal {call.map_ordinal} was not created")
    if call.kind is AuxKind.MAP_UPDATE:
        return str(kernel.map_update(map_id, call.key, call.value, call.flags))
    if call.kind is AuxKind.MAP_LOOKUP:
        value = kernel.map_lookup(map_id, call.key)
        return "miss" if value is None else value.hex()
    if call.kind is AuxKind.MAP_DELETE:
        return str(kernel.map_delete(map_id, call.key))
    if call.kind is AuxKind.MAP_PUSH:
        return str(kernel.map_push(map_id, call.value, call.flags))
    if call.kind is AuxKind.MAP_POP:
        value = kernel.map_pop(map_id)
        return "empty" if value is None else value.hex()
    if call.kind is AuxKind.RINGBUF_CONSUME:
        return f"{len(kernel.ringbuf_consume(map_id))} records"
    if call.kind is AuxKind.PROG_ARRAY_UPDATE:
        stub = kernel.load_stub(prog_type, call.index + 1)
        kernel.prog_array_update(map_id, call.index, stub)
        return f"slot {call.index} -> prog {stub}"
    kernel.perf_event_set(map_id, call.index)
    return f"slot {call.index} enabled"


def _metrics(inp: FuzzInput, insns: int) -> Expressiveness:
    return Expressiveness(insns=insns, helper_calls=len(inp.ast.helper_calls()), maps=len(inp.ast.map_deps))


def execute_input(inp: FuzzInput, kernel: SimKernel) -> InputOutcome:
    """按序执行序言、触发与辅助调用。任何失败都记录在 call_log 里，不向外抛。"""
    outcome = InputOutcome()
    try:
        _execute(inp, kernel, outcome)
    except Exception as exc:
        logger.exception("harness failure while executing input %s", inp.digest)
        outcome.call_log.append(CallRecord("internal", False, repr(exc)))
    return outcome


def _execute(inp: FuzzInput, kernel: SimKernel, outcome: InputOutcome) -> None:
    catalog = kernel.catalog
    log = outcome.call_log
    handles: dict[int, int] = {}
    for ordinal, spec in enumerate(inp.ast.map_deps):
        try:
            handles[ordinal] = kernel.sys_map_create(spec)
            log.append(CallRecord(f"map_create[{ordinal}]", True, f"map {handles[ordinal]}"))
        except SyscallError as exc:
            log.append(CallRecord(f"map_create[{ordinal}]", False, exc.code))

    prog_id = None
    try:
        prog = compile_ast(inp.ast, catalog)
        prog_id = kernel.sys_prog_load(prog, handles)
        outcome.loaded = True
        outcome.metrics = _metrics(inp, len(prog.insns))
        log.append(CallRecord("prog_load", True, f"prog {prog_id}"))
    except CompileError as exc:
        outcome.rule_id = "compile_error"
        log.append(CallRecord("prog_load", False, exc.reason))
    except (VerifierError, LoadError) as exc:
        outcome.rule_id = exc.rule_id
        log.append(CallRecord("prog_load", False, exc.rule_id))
    except SyscallError as exc:
        outcome.rule_id = exc.code
        log.append(CallRecord("prog_load", False, exc.code))

    spec = catalog.program(inp.ast.prog_type)
    if prog_id is not None:
        try:
            target = kernel.sys_target_create(spec.attach_kind) if spec.attach_kind.needs_target else None
            kernel.sys_prog_attach(prog_id, spec.attach_kind, target)
            outcome.attached = True
            log.append(CallRecord("prog_attach", True, spec.attach_kind.value))
        except SyscallError as exc:
            log.append(CallRecord("prog_attach", False, exc.code))

    results: list[ExecResult] = []

    def run_aux(slot: int) -> None:
        for call in inp.aux_calls:
            if call.slot != slot:
                continue
            try:
                log.append(CallRecord(call.kind.value, True, _run_aux(kernel, call, handles, inp.ast.prog_type)))
            except SyscallError as exc:
                log.append(CallRecord(call.kind.value, False, exc.code))

    for slot, trigger in enumerate(inp.triggers):
        run_aux(slot)
        if trigger.kind is TriggerKind.TEST_RUN:
            if prog_id is None:
                log.append(CallRecord("test_run", False, "no_such_prog"))
                continue
            try:
                results.append(kernel.sys_test_run(prog_id, trigger.payload))
                log.append(CallRecord("test_run", True, f"r0={results[-1].return_value:#x}"))
            except SyscallError as exc:
                log.append(CallRecord("test_run", False, exc.code))
        else:
            fired = kernel.trigger_event(spec.attach_kind, trigger.payload, interrupt=trigger.interrupt)
            results.extend(fired)
            log.append(CallRecord("trigger" + ("[irq]" if trigger.interrupt else ""), True, f"{len(fired)} runs"))
    run_aux(len(inp.triggers))

    signature: set[int] = set()
    bugs: dict[tuple[str, str], BugReport] = {}
    helpers: set[int] = set()
    for result in results:
        signature.update(result.coverage_delta)
        helpers.update(call.helper_id for call in result.helper_trace)
        for finding in result.oracle_findings:
            bugs.setdefault(finding.key, finding.model_copy(update={"input_digest": inp.digest}))
    outcome.executed = any(r.prog_id == prog_id for r in results) if prog_id is not None else False
    outcome.signature = frozenset(signature)
    outcome.bugs = list(bugs.values())
    outcome.helpers_used = frozenset(helpers)
