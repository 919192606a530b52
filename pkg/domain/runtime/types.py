from enum import StrEnum

from pydantic import BaseModel, Field

INSN_CAP = 1_000_000
TAIL_CALL_LIMIT = 33
NR_CPUS = 4

# helper 的负返回码
EPERM = 1
ENOENT = 2
E2BIG = 7
EFAULT = 14
EBUSY = 16
EEXIST = 17
EINVAL = 22
ENOSPC = 28


def neg(errno: int) -> int:
    return (-errno) & 0xFFFFFFFFFFFFFFFF


class SyscallError(Exception):
    """模拟 bpf(2) 调用失败；code 是稳定的机器标签。"""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message}


class MemoryFault(Exception):
    """访问落在未映射区域、空页或区域边界之外。"""

    def __init__(self, kind: str, address: int, width: int, detail: str = ""):
        super().__init__(f"{kind} access at {address:#x} width {width} {detail}".strip())
        self.kind = kind
        self.address = address
        self.width = width


class Oracle(StrEnum):
    OOB_ACCESS = "oob_access"
    NULL_DEREF = "null_deref"
    REF_LEAK_RUNTIME = "ref_leak_runtime"
    LOCK_CONTEXT_VIOLATION = "lock_context_violation"
    EXEC_DIVERGENCE = "exec_divergence"


class SeededBug(StrEnum):
    TAILCALL_OOB = "tailcall_oob"
    LOOKUP_NULL_PASSTHROUGH = "lookup_null_passthrough"
    RINGBUF_LEAK = "ringbuf_leak"
    QUEUE_LOCK_CTX = "queue_lock_ctx"
    SHIFT_UB = "shift_ub"
    USERCOPY_NMI = "usercopy_nmi"


def parse_seeded_bugs(spec: str | None) -> frozenset[SeededBug]:
    """`none`、`all` 或逗号分隔的 bug 名称。"""
    if spec is None:
        return frozenset()
    spec = spec.strip().lower()
    if spec in ("", "none"):
        return frozenset()
    if spec == "all":
        return frozenset(SeededBug)
    bugs = set()
    for name in spec.split(","):
        name = name.strip()
        try:
            bugs.add(SeededBug(name))
        except ValueError:
            raise ValueError(f"unknown seeded bug {name!r}; expected one of {', '.join(SeededBug)}") from None
    return frozenset(bugs)


class Engine(StrEnum):
    INTERP = "interp"
    LINEAR = "linear"
    BOTH = "both"


class BugReport(BaseModel):
    oracle: Oracle
    location: str
    detail: str = ""
    input_digest: str | None = None

    @property
    def key(self) -> tuple[str, str]:
        return self.oracle.value, self.location


class HelperCall(BaseModel):
    helper_id: int
    args_digest: str


class ExecResult(BaseModel):
    return_value: int = 0
    helper_trace: list[HelperCall] = Field(default_factory=list)
    insn_count: int = 0
    coverage_delta: list[int] = Field(default_factory=list)
    oracle_findings: list[BugReport] = Field(default_factory=list)
    aborted: bool = False
    abort_reason: str | None = None
    prog_id: int | None = None
    engine: Engine = Engine.INTERP
    interrupt: bool = False

    def observables(self) -> tuple:
        return self.return_value, [(c.helper_id, c.args_digest) for c in self.helper_trace]
