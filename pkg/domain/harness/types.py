import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Any

from pydantic import BaseModel, Field, field_validator, model_validator

from domain.astgen import GenConfig, ProgramAst, deserialize_ast, serialize_ast
from domain.runtime import BugReport, Engine, Oracle, parse_seeded_bugs

STATS_SCHEMA = 1
INPUT_SCHEMA = 1


class AuxKind(StrEnum):
    MAP_UPDATE = "map_update"
    MAP_LOOKUP = "map_lookup"
    MAP_DELETE = "map_delete"
    MAP_PUSH = "map_push"
    MAP_POP = "map_pop"
    RINGBUF_CONSUME = "ringbuf_consume"
    PROG_ARRAY_UPDATE = "prog_array_update"
    PERF_EVENT_SET = "perf_event_set"


class TriggerKind(StrEnum):
    TEST_RUN = "test_run"
    EVENT = "event"


class ActionKind(StrEnum):
    GENERATE = "generate"
    MUTATE_PROGRAM = "mutate_program"
    MUTATE_AUX = "mutate_aux"


@dataclass(frozen=True, slots=True)
class Action:
    kind: ActionKind
    entry: int | None = None


@dataclass(frozen=True, slots=True)
class PrologueCall:
    """加载前的依赖调用；由 AST 推导，不参与变异。"""

    kind: str
    arg: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "arg": self.arg}


@dataclass(frozen=True, slots=True)
class TriggerCall:
    kind: TriggerKind
    payload: bytes = b""
    interrupt: bool = False

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "payload": self.payload.hex(), "interrupt": self.interrupt}

    @classmethod
    def from_dict(cls, data: dict) -> "TriggerCall":
        return cls(TriggerKind(data["kind"]), bytes.fromhex(data.get("payload", "")), bool(data.get("interrupt", False)))


@dataclass(frozen=True, slots=True)
class AuxCall:
    """用户态 map 操作。slot 表示在第几个触发调用之前执行（等于触发数时放在最后）。"""

    kind: AuxKind
    map_ordinal: int
    slot: int = 0
    key: bytes = b""
    value: bytes = b""
    flags: int = 0
    index: int = 0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "map": self.map_ordinal,
            "slot": self.slot,
            "key": self.key.hex(),
            "value": self.value.hex(),
            "flags": self.flags,
            "index": self.index,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AuxCall":
        return cls(
            AuxKind(data["kind"]),
            int(data["map"]),
            int(data.get("slot", 0)),
            bytes.fromhex(data.get("key", "")),
            bytes.fromhex(data.get("value", "")),
            int(data.get("flags", 0)),
            int(data.get("index", 0)),
        )


@dataclass(slots=True)
class FuzzInput:
    ast: ProgramAst
    prologue: list[PrologueCall] = field(default_factory=list)
    triggers: list[TriggerCall] = field(default_factory=list)
    aux_calls: list[AuxCall] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema": INPUT_SCHEMA,
            "ast": serialize_ast(self.ast),
            "prologue": [c.to_dict() for c in self.prologue],
            "triggers": [t.to_dict() for t in self.triggers],
            "aux_calls": [a.to_dict() for a in self.aux_calls],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FuzzInput":
        from .inputs import prologue_for

        ast = deserialize_ast(data["ast"])
        return cls(
            ast,
            prologue_for(ast),
            [TriggerCall.from_dict(t) for t in data.get("triggers", [])],
            [AuxCall.from_dict(a) for a in data.get("aux_calls", [])],
        )

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def digest(self) -> str:
        return hashlib.sha1(self.canonical().encode()).hexdigest()[:16]

    @property
    def program_digest(self) -> str:
        return hashlib.sha1(serialize_ast(self.ast).encode()).hexdigest()[:16]

    @property
    def size(self) -> int:
        return len(self.aux_calls) + len(self.triggers) + sum(1 for _ in self.ast.walk())


@dataclass(slots=True)
class CallRecord:
    call: str
    ok: bool
    detail: str = ""


@dataclass(slots=True)
class Expressiveness:
    insns: int = 0
    helper_calls: int = 0
    maps: int = 0


@dataclass(slots=True)
class InputOutcome:
    """一次输入执行的结果；加载/挂载/执行计数各至多一次。"""

    loaded: bool = False
    attached: bool = False
    executed: bool = False
    rule_id: str | None = None
    signature: frozenset[int] = frozenset()
    bugs: list[BugReport] = field(default_factory=list)
    call_log: list[CallRecord] = field(default_factory=list)
    metrics: Expressiveness | None = None
    helpers_used: frozenset[int] = frozenset()


class SchedulerConfig(BaseModel):
    p_generate: float = Field(default=0.3, ge=0, le=1)
    p_mutate_program: float = Field(default=0.5, ge=0, le=1)
    p_mutate_aux: float = Field(default=0.2, ge=0, le=1)
    batch_size: int = Field(default=50, ge=1)

    @model_validator(mode="after")
    def _check_sum(self) -> "SchedulerConfig":
        total = self.p_generate + self.p_mutate_program + self.p_mutate_aux
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"scheduler probabilities must sum to 1, got {total}")
        return self


_BUDGET = re.compile(r"^(\d+)(s?)$")


class FuzzConfig(BaseModel):
    seed: int = Field(default=0, ge=0)
    budget: str = "1000"
    workers: int = Field(default=1, ge=1)
    corpus_dir: str | None = None
    seed_bugs: str = "none"
    stats_out: str | None = None
    blind: bool = False
    engine: Engine = Engine.BOTH
    max_aux_calls: int = Field(default=4, ge=0)
    gen: GenConfig = Field(default_factory=GenConfig)
    scheduler: SchedulerConfig = Field(default_factory=SchedulerConfig)

    @field_validator("budget")
    @classmethod
    def _check_budget(cls, value: str) -> str:
        if not _BUDGET.match(value.strip()):
            raise ValueError("budget must be an iteration count (e.g. 1000) or seconds (e.g. 600s)")
        return value.strip()

    @field_validator("seed_bugs")
    @classmethod
    def _check_bugs(cls, value: str) -> str:
        parse_seeded_bugs(value)
        return value

    @property
    def seconds(self) -> int | None:
        m = _BUDGET.match(self.budget)
        return int(m.group(1)) if m.group(2) else None

    @property
    def iterations(self) -> int | None:
        m = _BUDGET.match(self.budget)
        return None if m.group(2) else int(m.group(1))

    @property
    def bugs(self):
        return parse_seeded_bugs(self.seed_bugs)


class Stats(BaseModel):
    """会话统计；全部是可加的计数，worker 之间按顺序合并。"""

    iterations: int = 0
    programs_generated: int = 0
    loads_attempted: int = 0
    loads_succeeded: int = 0
    attaches_attempted: int = 0
    attaches_succeeded: int = 0
    inputs_executed: int = 0
    programs: dict[str, bool] = Field(default_factory=dict)
    rule_histogram: dict[str, int] = Field(default_factory=dict)
    insns_total: int = 0
    insns_max: int = 0
    helpers_total: int = 0
    helpers_max: int = 0
    maps_total: int = 0
    maps_max: int = 0
    helpers_used: list[int] = Field(default_factory=list)
    findings: dict[str, int] = Field(default_factory=dict)
    coverage: int = 0
    coverage_curve: list[tuple[int, int]] = Field(default_factory=list)
    corpus_size: int = 0

    @property
    def unique_programs(self) -> int:
        return len(self.programs)

    @property
    def executed_programs(self) -> int:
        return sum(1 for executed in self.programs.values() if executed)

    def record(self, inp: FuzzInput, outcome: InputOutcome) -> None:
        self.iterations += 1
        digest = inp.program_digest
        self.loads_attempted += 1
        self.programs.setdefault(digest, False)
        if outcome.loaded:
            self.loads_succeeded += 1
            self.attaches_attempted += 1
            m = outcome.metrics or Expressiveness()
            self.insns_total += m.insns
            self.insns_max = max(self.insns_max, m.insns)
            self.helpers_total += m.helper_calls
            self.helpers_max = max(self.helpers_max, m.helper_calls)
            self.maps_total += m.maps
            self.maps_max = max(self.maps_max, m.maps)
        elif outcome.rule_id:
            self.rule_histogram[outcome.rule_id] = self.rule_histogram.get(outcome.rule_id, 0) + 1
        if outcome.attached:
            self.attaches_succeeded += 1
        if outcome.executed:
            self.inputs_executed += 1
            self.programs[digest] = True
        self.helpers_used = sorted(set(self.helpers_used) | outcome.helpers_used)
        for bug in outcome.bugs:
            self.findings[bug.oracle.value] = self.findings.get(bug.oracle.value, 0) + 1

    def merge(self, other: "Stats") -> None:
        for name in (
            "iterations",
            "programs_generated",
            "loads_attempted",
            "loads_succeeded",
            "attaches_attempted",
            "attaches_succeeded",
            "inputs_executed",
            "insns_total",
            "helpers_total",
            "maps_total",
        ):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        for name in ("insns_max", "helpers_max", "maps_max"):
            setattr(self, name, max(getattr(self, name), getattr(other, name)))
        for digest, executed in other.programs.items():
            self.programs[digest] = self.programs.get(digest, False) or executed
        self.helpers_used = sorted(set(self.helpers_used) | set(other.helpers_used))
        self.rule_histogram = dict(Counter(self.rule_histogram) + Counter(other.rule_histogram))
        self.findings = dict(Counter(self.findings) + Counter(other.findings))


@dataclass(slots=True)
class BugRecord:
    report: BugReport
    reproducer: FuzzInput
    kernel_seed: int
    seed_bugs: str

    @property
    def oracle(self) -> Oracle:
        return self.report.oracle

    def to_dict(self) -> dict[str, Any]:
        return {
            "oracle": self.report.oracle.value,
            "location": self.report.location,
            "detail": self.report.detail,
            "input_digest": self.report.input_digest,
            "kernel_seed": self.kernel_seed,
            "seed_bugs": self.seed_bugs,
            "input": self.reproducer.to_dict(),
        }
