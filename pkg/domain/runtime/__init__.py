from .context import ContextFrame, build_context
from .coverage import PROBE_IDS, PROBE_NAMES, CoverageMap, probe_id
from .evaluator import evaluate_ast
from .execution import Execution, TailCall
from .helpers import HELPER_IMPLS
from .interpreter import run_interpreter
from .kernel import Attachment, LoadedProgram, LoadStats, SimKernel, diff_results
from .linear import predecode, run_linear
from .lockdep import AcquireContext, LockContextTracker, lockdep_check
from .maps import BPF_ANY, BPF_EXIST, BPF_NOEXIST, MapInstance, create_map
from .memory import AddressSpace, Region
from .service import PreparedProgram, RuntimeService
from .types import (
    INSN_CAP,
    NR_CPUS,
    TAIL_CALL_LIMIT,
    BugReport,
    Engine,
    ExecResult,
    HelperCall,
    MemoryFault,
    Oracle,
    SeededBug,
    SyscallError,
    parse_seeded_bugs,
)


def interpret(prog_id: int, payload: bytes, kernel: SimKernel) -> ExecResult:
    """用参考解释器跑一次已加载的程序。"""
    return _run_with(kernel, prog_id, payload, Engine.INTERP)


def exec_linear(prog_id: int, payload: bytes, kernel: SimKernel) -> ExecResult:
    return _run_with(kernel, prog_id, payload, Engine.LINEAR)


def _run_with(kernel: SimKernel, prog_id: int, payload: bytes, engine: Engine) -> ExecResult:
    previous, kernel.engine = kernel.engine, engine
    try:
        return kernel.execute(prog_id, payload)
    finally:
        kernel.engine = previous


__all__ = [
    "ContextFrame",
    "build_context",
    "PROBE_IDS",
    "PROBE_NAMES",
    "CoverageMap",
    "probe_id",
    "evaluate_ast",
    "Execution",
    "TailCall",
    "HELPER_IMPLS",
    "run_interpreter",
    "Attachment",
    "LoadedProgram",
    "LoadStats",
    "SimKernel",
    "diff_results",
    "predecode",
    "run_linear",
    "AcquireContext",
    "LockContextTracker",
    "lockdep_check",
    "BPF_ANY",
    "BPF_EXIST",
    "BPF_NOEXIST",
    "MapInstance",
    "create_map",
    "AddressSpace",
    "Region",
    "PreparedProgram",
    "RuntimeService",
    "INSN_CAP",
    "NR_CPUS",
    "TAIL_CALL_LIMIT",
    "BugReport",
    "Engine",
    "ExecResult",
    "HelperCall",
    "MemoryFault",
    "Oracle",
    "SeededBug",
    "SyscallError",
    "parse_seeded_bugs",
    "interpret",
    "exec_linear",
]
