from .corpus import Corpus, CorpusEntry
from .executor import execute_input
from .inputs import build_input, mutate_aux, prologue_for, rebuild_for_program
from .minimize import minimize_input, reproduces
from .report import parse_kv, render_kv, render_text, report_stats, summary
from .scheduler import schedule_next
from .service import FuzzService
from .session import SessionResult, fuzz_loop, run_epoch, write_stats
from .types import (
    Action,
    ActionKind,
    AuxCall,
    AuxKind,
    BugRecord,
    CallRecord,
    Expressiveness,
    FuzzConfig,
    FuzzInput,
    InputOutcome,
    PrologueCall,
    SchedulerConfig,
    Stats,
    TriggerCall,
    TriggerKind,
)

__all__ = [
    "Corpus",
    "CorpusEntry",
    "execute_input",
    "build_input",
    "mutate_aux",
    "prologue_for",
    "rebuild_for_program",
    "minimize_input",
    "reproduces",
    "parse_kv",
    "render_kv",
    "render_text",
    "report_stats",
    "summary",
    "schedule_next",
    "FuzzService",
    "SessionResult",
    "fuzz_loop",
    "run_epoch",
    "write_stats",
    "Action",
    "ActionKind",
    "AuxCall",
    "AuxKind",
    "BugRecord",
    "CallRecord",
    "Expressiveness",
    "FuzzConfig",
    "FuzzInput",
    "InputOutcome",
    "PrologueCall",
    "SchedulerConfig",
    "Stats",
    "TriggerCall",
    "TriggerKind",
]
