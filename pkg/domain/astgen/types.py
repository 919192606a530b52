from dataclasses import dataclass, field
from enum import StrEnum
from typing import Union

from pydantic import BaseModel, Field, model_validator

from domain.catalog import MapSpecRequest, ProgramTypeId, VerifierValueType


class AstParseError(Exception):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


class GenerationError(Exception):
    """有界重试用尽，放弃本次候选。"""


# 表达式


@dataclass(frozen=True, slots=True)
class Var:
    id: int

    def __str__(self) -> str:
        return f"v{self.id}"


@dataclass(frozen=True, slots=True)
class Const:
    value: int

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True, slots=True)
class MapRef:
    ordinal: int

    def __str__(self) -> str:
        return f"&map_{self.ordinal}"


@dataclass(frozen=True, slots=True)
class CtxRef:
    def __str__(self) -> str:
        return "ctx"


Expr = Union[Var, Const, MapRef, CtxRef]


class PredKind(StrEnum):
    NOT_NULL = "not_null"
    SIZE_LE = "size_le"
    NOT_ZERO = "not_zero"


@dataclass(frozen=True, slots=True)
class Predicate:
    kind: PredKind
    var: int
    bound: int = 0

    def __str__(self) -> str:
        if self.kind is PredKind.NOT_NULL:
            return f"v{self.var} != null"
        if self.kind is PredKind.SIZE_LE:
            return f"v{self.var} <= {self.bound}"
        return f"v{self.var} >= 1"


# 语句


@dataclass(frozen=True, slots=True)
class CtxBinding:
    var: int
    field: str


@dataclass(frozen=True, slots=True)
class DeclLiteral:
    var: int
    value: int


@dataclass(frozen=True, slots=True)
class DeclStackBuf:
    var: int
    size: int


ARITH_OPS = ("add", "sub", "mul", "div", "mod", "or", "and", "xor", "lsh", "rsh", "arsh")


@dataclass(frozen=True, slots=True)
class DeclArith:
    var: int
    op: str
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True, slots=True)
class DeclHelperCall:
    var: int | None
    helper: str
    args: tuple[Expr, ...]


@dataclass(slots=True)
class GuardedBlock:
    predicates: list[Predicate]
    body: list["Stmt"]


Stmt = Union[DeclLiteral, DeclStackBuf, DeclArith, DeclHelperCall, GuardedBlock]


@dataclass(slots=True)
class ProgramAst:
    prog_type: ProgramTypeId
    ctx_bindings: list[CtxBinding] = field(default_factory=list)
    stmts: list[Stmt] = field(default_factory=list)
    map_deps: list[MapSpecRequest] = field(default_factory=list)
    ret_expr: Expr = Const(0)

    def walk(self):
        """前序遍历全部语句（含守卫体内）。"""
        stack = [iter(self.stmts)]
        while stack:
            stmt = next(stack[-1], None)
            if stmt is None:
                stack.pop()
                continue
            yield stmt
            if isinstance(stmt, GuardedBlock):
                stack.append(iter(stmt.body))

    def helper_calls(self) -> list[DeclHelperCall]:
        return [s for s in self.walk() if isinstance(s, DeclHelperCall)]

    def max_var(self) -> int:
        ids = [b.var for b in self.ctx_bindings]
        for stmt in self.walk():
            if not isinstance(stmt, GuardedBlock) and stmt.var is not None:
                ids.append(stmt.var)
        return max(ids, default=-1)


@dataclass(slots=True)
class VarInfo:
    """变量在生成/变异期间的类型信息（不序列化，可由 AST 推导）。"""

    vtype: VerifierValueType
    region: int | None = None
    ref_kind: str | None = None
    map_ordinal: int | None = None
    const: int | None = None
    is_buffer: bool = False
    ctx_field: str | None = None


class GenWeights(BaseModel):
    direct: float = Field(default=0.4, gt=0)
    context: float = Field(default=0.3, gt=0)
    helper: float = Field(default=0.3, gt=0)


class GenConfig(BaseModel):
    seed: int = 0
    max_depth: int = Field(default=3, ge=1)
    stmt_budget: int = Field(default=6, ge=1)
    weights: GenWeights = Field(default_factory=GenWeights)
    path_budget: int = Field(default=256, ge=1)
    stack_budget: int = Field(default=448, ge=64, le=512)
    max_buffer: int = Field(default=64, ge=8, le=512)
    max_retries: int = Field(default=20, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "GenConfig":
        if self.max_buffer > self.stack_budget:
            raise ValueError("max_buffer cannot exceed stack_budget")
        return self
