import re

from pydantic import ValidationError

from domain.catalog import MapSpecRequest, MapTypeId, ProgramTypeId
from domain.isa import to_s64

from .types import (
    ARITH_OPS,
    AstParseError,
    Const,
    CtxBinding,
    CtxRef,
    DeclArith,
    DeclHelperCall,
    DeclLiteral,
    DeclStackBuf,
    Expr,
    GuardedBlock,
    MapRef,
    PredKind,
    Predicate,
    ProgramAst,
    Stmt,
    Var,
)

INDENT = "  "


def _render(stmt: Stmt, depth: int, out: list[str]) -> None:
    pad = INDENT * depth
    if isinstance(stmt, DeclLiteral):
        out.append(f"{pad}let v{stmt.var} = {stmt.value}")
    elif isinstance(stmt, DeclStackBuf):
        out.append(f"{pad}buf v{stmt.var} {stmt.size}")
    elif isinstance(stmt, DeclArith):
        out.append(f"{pad}arith v{stmt.var} = {stmt.lhs} {stmt.op} {stmt.rhs}")
    elif isinstance(stmt, DeclHelperCall):
        target = f"v{stmt.var} = " if stmt.var is not None else ""
        args = ", ".join(str(a) for a in stmt.args)
        out.append(f"{pad}call {target}{stmt.helper}({args})")
    else:
        out.append(f"{pad}if {' && '.join(str(p) for p in stmt.predicates)} {{")
        for inner in stmt.body:
            _render(inner, depth + 1, out)
        out.append(f"{pad}}}")


def serialize_ast(ast: ProgramAst) -> str:
    out = [f"program {ast.prog_type.name}"]
    for ordinal, dep in enumerate(ast.map_deps):
        out.append(
            f"map {ordinal} {dep.map_type.name} key={dep.key_size} value={dep.value_size} "
            f"entries={dep.max_entries} flags={dep.flags:#x}"
        )
    for binding in ast.ctx_bindings:
        out.append(f"ctx v{binding.var} {binding.field}")
    for stmt in ast.stmts:
        _render(stmt, 0, out)
    out.append(f"return {ast.ret_expr}")
    return "\n".join(out) + "\n"


_PROGRAM = re.compile(r"program\s+(\w+)")
_MAP = re.compile(
    r"map\s+(\d+)\s+(\w+)\s+key=(\d+)\s+value=(\d+)\s+entries=(\d+)\s+flags=(0x[0-9a-fA-F]+|\d+)"
)
_CTX = re.compile(r"ctx\s+v(\d+)\s+(\w+)")
_LET = re.compile(r"let\s+v(\d+)\s*=\s*(\S+)")
_BUF = re.compile(r"buf\s+v(\d+)\s+(\d+)")
_ARITH = re.compile(r"arith\s+v(\d+)\s*=\s*(\S+)\s+(\w+)\s+(\S+)")
_CALL = re.compile(r"call\s+(?:v(\d+)\s*=\s*)?(\w+)\((.*)\)")
_IF = re.compile(r"if\s+(.+?)\s*\{")
_RETURN = re.compile(r"return\s+(\S+)")
_PREDS = (
    (re.compile(r"v(\d+)\s*!=\s*null"), PredKind.NOT_NULL),
    (re.compile(r"v(\d+)\s*<=\s*(\d+)"), PredKind.SIZE_LE),
    (re.compile(r"v(\d+)\s*>=\s*1"), PredKind.NOT_ZERO),
)


class _Parser:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.lineno = 0
        self.ast: ProgramAst | None = None
        self.defined: set[int] = set()
        self.fields: set[str] = set()
        self.blocks: list[list[Stmt]] = []
        self.returned = False

    def fail(self, message: str) -> AstParseError:
        return AstParseError(self.lineno, message)

    def integer(self, token: str) -> int:
        try:
            value = int(token, 0)
        except ValueError:
            raise self.fail(f"bad integer {token!r}") from None
        if not -(1 << 63) <= value < (1 << 64):
            raise self.fail(f"integer {token} out of 64-bit range")
        return to_s64(value)

    def use(self, var: int) -> int:
        if var not in self.defined:
            raise self.fail(f"v{var} used before definition")
        return var

    def define(self, var: int) -> int:
        if var in self.defined:
            raise self.fail(f"v{var} defined twice")
        self.defined.add(var)
        return var

    def expr(self, token: str) -> Expr:
        token = token.strip()
        if token == "ctx":
            return CtxRef()
        if m := re.fullmatch(r"v(\d+)", token):
            return Var(self.use(int(m[1])))
        if m := re.fullmatch(r"&map_(\d+)", token):
            ordinal = int(m[1])
            if ordinal >= len(self.ast.map_deps):
                raise self.fail(f"reference to undeclared map {ordinal}")
            return MapRef(ordinal)
        return Const(self.integer(token))

    def predicate(self, text: str) -> Predicate:
        for pattern, kind in _PREDS:
            if m := pattern.fullmatch(text.strip()):
                var = self.use(int(m[1]))
                return Predicate(kind, var, int(m[2]) if kind is PredKind.SIZE_LE else 0)
        raise self.fail(f"bad predicate {text.strip()!r}")

    def header(self, line: str) -> bool:
        if m := _MAP.fullmatch(line):
            ordinal, type_name = int(m[1]), m[2]
            if ordinal != len(self.ast.map_deps):
                raise self.fail(f"map ordinal {ordinal} out of order")
            if type_name not in MapTypeId.__members__:
                raise self.fail(f"unknown map type {type_name}")
            try:
                spec = MapSpecRequest(
                    map_type=MapTypeId[type_name],
                    key_size=int(m[3]),
                    value_size=int(m[4]),
                    max_entries=int(m[5]),
                    flags=int(m[6], 0),
                )
            except ValidationError as exc:
                raise self.fail(f"bad map declaration: {exc.errors()[0]['msg']}") from None
            self.ast.map_deps.append(spec)
            return True
        if m := _CTX.fullmatch(line):
            if m[2] in self.fields:
                raise self.fail(f"context field {m[2]} bound twice")
            self.fields.add(m[2])
            self.ast.ctx_bindings.append(CtxBinding(self.define(int(m[1])), m[2]))
            return True
        return False

    def statement(self, line: str) -> Stmt | None:
        if m := _LET.fullmatch(line):
            value = self.integer(m[2])
            return DeclLiteral(self.define(int(m[1])), value)
        if m := _BUF.fullmatch(line):
            size = int(m[2])
            if size <= 0:
                raise self.fail("buffer size must be positive")
            return DeclStackBuf(self.define(int(m[1])), size)
        if m := _ARITH.fullmatch(line):
            if m[3] not in ARITH_OPS:
                raise self.fail(f"unknown arithmetic op {m[3]}")
            lhs, rhs = self.expr(m[2]), self.expr(m[4])
            return DeclArith(self.define(int(m[1])), m[3], lhs, rhs)
        if m := _CALL.fullmatch(line):
            args = tuple(self.expr(a) for a in m[3].split(",")) if m[3].strip() else ()
            var = self.define(int(m[1])) if m[1] is not None else None
            return DeclHelperCall(var, m[2], args)
        return None

    def parse(self) -> ProgramAst:
        for self.lineno, raw in enumerate(self.lines, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if self.ast is None:
                m = _PROGRAM.fullmatch(line)
                if not m:
                    raise self.fail("expected 'program <PROG_TYPE>'")
                if m[1] not in ProgramTypeId.__members__:
                    raise self.fail(f"unknown program type {m[1]}")
                self.ast = ProgramAst(ProgramTypeId[m[1]])
                self.blocks = [self.ast.stmts]
                continue
            if self.returned:
                raise self.fail("statement after return")
            if len(self.blocks) == 1 and self.header(line):
                continue
            if line == "}":
                if len(self.blocks) == 1:
                    raise self.fail("unbalanced '}'")
                self.blocks.pop()
                continue
            if m := _IF.fullmatch(line):
                preds = [self.predicate(p) for p in m[1].split("&&")]
                block = GuardedBlock(preds, [])
                self.blocks[-1].append(block)
                self.blocks.append(block.body)
                continue
            if m := _RETURN.fullmatch(line):
                if len(self.blocks) != 1:
                    raise self.fail("return inside a guarded block")
                self.ast.ret_expr = self.expr(m[1])
                self.returned = True
                continue
            stmt = self.statement(line)
            if stmt is None:
                raise self.fail(f"cannot parse {line!r}")
            self.blocks[-1].append(stmt)

        self.lineno = len(self.lines) + 1
        if self.ast is None:
            raise self.fail("empty program text")
        if len(self.blocks) != 1:
            raise self.fail("unexpected end of input: unclosed block")
        if not self.returned:
            raise self.fail("unexpected end of input: missing return")
        return self.ast


def deserialize_ast(text: str) -> ProgramAst:
    """解析文本格式的 AST；出错时抛出带 1 起始行号的 AstParseError。"""
    return _Parser(text).parse()
