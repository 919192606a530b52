"""模糊输入的组装与系统调用侧的变异。"""

import copy
import random

from domain.astgen import ProgramAst
from domain.catalog import AttachKind, Catalog, CatalogService, MapSpecRequest, MapTypeId, ProgramTypeId

from .types import AuxCall, AuxKind, FuzzInput, PrologueCall, TriggerCall, TriggerKind

AUX_KINDS: dict[MapTypeId, tuple[AuxKind, ...]] = {
    MapTypeId.HASH: (AuxKind.MAP_UPDATE, AuxKind.MAP_LOOKUP, AuxKind.MAP_DELETE),
    MapTypeId.LRU_HASH: (AuxKind.MAP_UPDATE, AuxKind.MAP_LOOKUP, AuxKind.MAP_DELETE),
    MapTypeId.ARRAY: (AuxKind.MAP_UPDATE, AuxKind.MAP_LOOKUP),
    MapTypeId.PERCPU_ARRAY: (AuxKind.MAP_UPDATE, AuxKind.MAP_LOOKUP),
    MapTypeId.QUEUE: (AuxKind.MAP_PUSH, AuxKind.MAP_POP),
    MapTypeId.STACK: (AuxKind.MAP_PUSH, AuxKind.MAP_POP),
    MapTypeId.RINGBUF: (AuxKind.RINGBUF_CONSUME,),
    MapTypeId.PROG_ARRAY: (AuxKind.PROG_ARRAY_UPDATE,),
    MapTypeId.PERF_EVENT_ARRAY: (AuxKind.PERF_EVENT_SET,),
    MapTypeId.STACK_TRACE: (AuxKind.MAP_LOOKUP,),
    MapTypeId.CGROUP_STORAGE: (AuxKind.MAP_UPDATE, AuxKind.MAP_LOOKUP),
}

PACKET_TYPES = (ProgramTypeId.SOCKET_FILTER, ProgramTypeId.XDP)
INTERRUPT_P = 0.5
# 语料里的输入可以逐代累积状态：辅助调用最多到 max_aux 的这个倍数
AUX_GROWTH = 4
MAX_TRIGGERS = 8


def prologue_for(ast: ProgramAst, catalog: Catalog | None = None) -> list[PrologueCall]:
    """依赖闭包：按 map_deps 顺序建 map，然后加载、（建目标）、挂载。"""
    catalog = catalog or CatalogService.get()
    calls = [PrologueCall("map_create", f"{i}:{spec.map_type.name}") for i, spec in enumerate(ast.map_deps)]
    calls.append(PrologueCall("prog_load", ast.prog_type.name))
    kind = catalog.program(ast.prog_type).attach_kind
    if kind.needs_target:
        calls.append(PrologueCall("target_create", kind.value))
    calls.append(PrologueCall("prog_attach", kind.value))
    return calls


def sample_payload(pt: ProgramTypeId, rng: random.Random, catalog: Catalog) -> bytes:
    if pt in PACKET_TYPES:
        return rng.randbytes(rng.randint(14, 128))
    return rng.randbytes(catalog.program(pt).context.size)


def sample_triggers(ast: ProgramAst, rng: random.Random, catalog: Catalog) -> list[TriggerCall]:
    """总有一次 TEST_RUN，再按挂载类型补事件；跟踪类事件可能落在模拟中断里。"""
    pt = ast.prog_type
    triggers = [TriggerCall(TriggerKind.TEST_RUN, sample_payload(pt, rng, catalog))]
    kind = catalog.program(pt).attach_kind
    triggers.append(TriggerCall(TriggerKind.EVENT, sample_payload(pt, rng, catalog)))
    if kind is AttachKind.TRACE_EVENT and rng.random() < INTERRUPT_P:
        triggers.append(TriggerCall(TriggerKind.EVENT, sample_payload(pt, rng, catalog), interrupt=True))
    return triggers


def _key(spec: MapSpecRequest, rng: random.Random) -> bytes:
    if spec.key_size == 0:
        return b""
    if spec.map_type in (MapTypeId.ARRAY, MapTypeId.PERCPU_ARRAY, MapTypeId.STACK_TRACE):
        # 偶尔越过 max_entries
        value = rng.randrange(max(spec.max_entries, 1) + 2)
    else:
        value = rng.choice((0, 1, rng.getrandbits(8 * spec.key_size)))
    return value.to_bytes(spec.key_size, "little")


def sample_aux_call(ordinal: int, spec: MapSpecRequest, slot: int, rng: random.Random) -> AuxCall:
    kind = rng.choice(AUX_KINDS[spec.map_type])
    if kind is AuxKind.MAP_UPDATE:
        return AuxCall(kind, ordinal, slot, _key(spec, rng), rng.randbytes(spec.value_size), rng.choice((0, 0, 1, 2)))
    if kind in (AuxKind.MAP_LOOKUP, AuxKind.MAP_DELETE):
        return AuxCall(kind, ordinal, slot, _key(spec, rng))
    if kind is AuxKind.MAP_PUSH:
        return AuxCall(kind, ordinal, slot, value=rng.randbytes(spec.value_size), flags=rng.choice((0, 2)))
    if kind in (AuxKind.PROG_ARRAY_UPDATE, AuxKind.PERF_EVENT_SET):
        return AuxCall(kind, ordinal, slot, index=rng.randrange(spec.max_entries))
    return AuxCall(kind, ordinal, slot)


def sample_aux(ast: ProgramAst, rng: random.Random, count: int, n_triggers: int) -> list[AuxCall]:
    if not ast.map_deps:
        return []
    calls = []
    for _ in range(count):
        ordinal = rng.randrange(len(ast.map_deps))
        calls.append(sample_aux_call(ordinal, ast.map_deps[ordinal], rng.randint(0, n_triggers), rng))
    return calls


def build_input(
    ast: ProgramAst,
    rng: random.Random,
    *,
    catalog: Catalog | None = None,
    max_aux: int = 4,
) -> FuzzInput:
    catalog = catalog or CatalogService.get()
    triggers = sample_triggers(ast, rng, catalog)
    aux = sample_aux(ast, rng, rng.randint(0, max_aux), len(triggers))
    return FuzzInput(ast, prologue_for(ast, catalog), triggers, aux)


def _aux_valid(call: AuxCall, ast: ProgramAst, n_triggers: int) -> bool:
    if call.map_ordinal >= len(ast.map_deps) or call.slot > n_triggers:
        return False
    spec = ast.map_deps[call.map_ordinal]
    if call.kind not in AUX_KINDS[spec.map_type]:
        return False
    if call.kind in (AuxKind.PROG_ARRAY_UPDATE, AuxKind.PERF_EVENT_SET):
        return call.index < spec.max_entries
    return True


def rebuild_for_program(
    parent: FuzzInput,
    ast: ProgramAst,
    rng: random.Random,
    *,
    catalog: Catalog | None = None,
    max_aux: int = 4,
) -> FuzzInput:
    """程序变异后：重算序言，保留仍然合法的触发和辅助调用。"""
    catalog = catalog or CatalogService.get()
    if ast.prog_type != parent.ast.prog_type:
        return build_input(ast, rng, catalog=catalog, max_aux=max_aux)
    triggers = list(parent.triggers)
    aux = [c for c in parent.aux_calls if _aux_valid(c, ast, len(triggers))]
    return FuzzInput(ast, prologue_for(ast, catalog), triggers, aux)


def mutate_aux(inp: FuzzInput, rng: random.Random, *, catalog: Catalog | None = None, max_aux: int = 4) -> FuzzInput:
    """只动随机系统调用及其参数，序言保持不变。"""
    catalog = catalog or CatalogService.get()
    out = FuzzInput(copy.deepcopy(inp.ast), list(inp.prologue), list(inp.triggers), list(inp.aux_calls))
    ops = []
    if out.ast.map_deps and len(out.aux_calls) < max(max_aux, 1) * AUX_GROWTH:
        ops.append("add")
    if out.aux_calls:
        ops += ["remove", "tweak", "move"]
    if len(out.triggers) < MAX_TRIGGERS:
        ops.append("trigger")
    ops.append("payload")
    op = rng.choice(ops)
    if op == "add":
        ordinal = rng.randrange(len(out.ast.map_deps))
        slot = rng.randint(0, len(out.triggers))
        out.aux_calls.insert(rng.randint(0, len(out.aux_calls)), sample_aux_call(ordinal, out.ast.map_deps[ordinal], slot, rng))
    elif op == "remove":
        del out.aux_calls[rng.randrange(len(out.aux_calls))]
    elif op == "tweak":
        pos = rng.randrange(len(out.aux_calls))
        call = out.aux_calls[pos]
        out.aux_calls[pos] = sample_aux_call(call.map_ordinal, out.ast.map_deps[call.map_ordinal], call.slot, rng)
    elif op == "move":
        pos = rng.randrange(len(out.aux_calls))
        call = out.aux_calls[pos]
        out.aux_calls[pos] = AuxCall(call.kind, call.map_ordinal, rng.randint(0, len(out.triggers)), call.key, call.value, call.flags, call.index)
    elif op == "trigger":
        # 再触发一次：程序在已有的 map 状态上继续运行
        pt = out.ast.prog_type
        interrupt = catalog.program(pt).attach_kind is AttachKind.TRACE_EVENT and rng.random() < INTERRUPT_P
        pos = rng.randint(0, len(out.triggers))
        out.triggers.insert(pos, TriggerCall(TriggerKind.EVENT, sample_payload(pt, rng, catalog), interrupt))
        out.aux_calls = [c if c.slot < pos else AuxCall(c.kind, c.map_ordinal, c.slot + 1, c.key, c.value, c.flags, c.index) for c in out.aux_calls]
    else:
        pos = rng.randrange(len(out.triggers))
        trigger = out.triggers[pos]
        out.triggers[pos] = TriggerCall(trigger.kind, sample_payload(out.ast.prog_type, rng, catalog), trigger.interrupt)
    return out
