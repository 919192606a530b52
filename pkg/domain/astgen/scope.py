from domain.catalog import ArgType, Catalog, RetType
from domain.catalog import VerifierValueType as V
from domain.isa import alu, to_s64
from domain.isa import opcodes as op

from .types import (
    ARITH_OPS,
    Const,
    DeclArith,
    DeclHelperCall,
    DeclLiteral,
    DeclStackBuf,
    Expr,
    GuardedBlock,
    MapRef,
    ProgramAst,
    Stmt,
    Var,
    VarInfo,
)

ARITH_CODES = {
    "add": op.BPF_ADD,
    "sub": op.BPF_SUB,
    "mul": op.BPF_MUL,
    "div": op.BPF_DIV,
    "mod": op.BPF_MOD,
    "or": op.BPF_OR,
    "and": op.BPF_AND,
    "xor": op.BPF_XOR,
    "lsh": op.BPF_LSH,
    "rsh": op.BPF_RSH,
    "arsh": op.BPF_ARSH,
}
assert set(ARITH_CODES) == set(ARITH_OPS)


def const_of(expr: Expr, info: dict[int, VarInfo]) -> int | None:
    """表达式在 verifier 眼中是否为已知常量。"""
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Var) and expr.id in info:
        return info[expr.id].const
    return None


def region_of(expr: Expr, info: dict[int, VarInfo]) -> int | None:
    if isinstance(expr, Var) and expr.id in info:
        return info[expr.id].region
    return None


def call_info(call: DeclHelperCall, ast: ProgramAst, info: dict[int, VarInfo], catalog: Catalog) -> VarInfo:
    helper = catalog.helper_by_name(call.helper)
    vtype = helper.ret.value_type
    map_ordinal = None
    if helper.map_arg_index is not None and helper.map_arg_index < len(call.args):
        ref = call.args[helper.map_arg_index]
        if isinstance(ref, MapRef):
            map_ordinal = ref.ordinal
    region = None
    if vtype.non_null is V.PTR_TO_MAP_VALUE and map_ordinal is not None and map_ordinal < len(ast.map_deps):
        region = ast.map_deps[map_ordinal].value_size
    elif vtype.non_null is V.PTR_TO_MEM:
        for kind, arg in zip(helper.args, call.args):
            if kind is ArgType.CONST_ALLOC_SIZE_OR_ZERO:
                region = const_of(arg, info)
    const = None
    if helper.ret is RetType.SCALAR and helper.ret_range and helper.ret_range[0] == helper.ret_range[1]:
        const = helper.ret_range[0]
    return VarInfo(vtype, region=region, ref_kind=helper.acquires_ref, map_ordinal=map_ordinal, const=const)


def stmt_info(stmt: Stmt, ast: ProgramAst, info: dict[int, VarInfo], catalog: Catalog) -> VarInfo | None:
    if isinstance(stmt, DeclLiteral):
        return VarInfo(V.SCALAR, const=stmt.value)
    if isinstance(stmt, DeclStackBuf):
        return VarInfo(V.PTR_TO_STACK, region=stmt.size, is_buffer=True)
    if isinstance(stmt, DeclArith):
        lhs, rhs = const_of(stmt.lhs, info), const_of(stmt.rhs, info)
        folded = None
        if lhs is not None and rhs is not None:
            folded = op_fold(stmt.op, lhs, rhs)
        return VarInfo(V.SCALAR, const=folded)
    if isinstance(stmt, DeclHelperCall) and stmt.var is not None:
        return call_info(stmt, ast, info, catalog)
    return None


def op_fold(name: str, lhs: int, rhs: int) -> int:
    return to_s64(alu(ARITH_CODES[name], lhs, rhs))


def annotate(ast: ProgramAst, catalog: Catalog) -> dict[int, VarInfo]:
    """按定义顺序推导每个变量的类型信息。"""
    info: dict[int, VarInfo] = {}
    context = catalog.program(ast.prog_type).context
    for binding in ast.ctx_bindings:
        field = context.field(binding.field)
        vtype = field.yields if field is not None else V.SCALAR
        info[binding.var] = VarInfo(vtype, ctx_field=binding.field)
    for stmt in ast.walk():
        if isinstance(stmt, GuardedBlock):
            continue
        result = stmt_info(stmt, ast, info, catalog)
        if result is not None:
            info[stmt.var] = result
    return info


def estimate_paths(stmts: list[Stmt]) -> int:
    """路径数上界：每个守卫贡献 (谓词数 + 体内路径数)，顺序组合相乘。"""
    total = 1
    for stmt in stmts:
        if isinstance(stmt, GuardedBlock):
            total *= len(stmt.predicates) + estimate_paths(stmt.body)
    return total


def stack_bytes(ast: ProgramAst) -> int:
    used = 8 * len(ast.ctx_bindings)
    for stmt in ast.walk():
        if isinstance(stmt, DeclStackBuf):
            used += -(-stmt.size // 8) * 8
        elif not isinstance(stmt, GuardedBlock) and stmt.var is not None:
            used += 8
    return used


def expr_vars(expr: Expr) -> set[int]:
    return {expr.id} if isinstance(expr, Var) else set()


def stmt_uses(stmt: Stmt) -> set[int]:
    """语句（含守卫体）读取的变量。"""
    if isinstance(stmt, GuardedBlock):
        used = {p.var for p in stmt.predicates}
        for inner in stmt.body:
            used |= stmt_uses(inner)
        return used
    if isinstance(stmt, DeclArith):
        return expr_vars(stmt.lhs) | expr_vars(stmt.rhs)
    if isinstance(stmt, DeclHelperCall):
        used: set[int] = set()
        for arg in stmt.args:
            used |= expr_vars(arg)
        return used
    return set()


def used_vars(ast: ProgramAst) -> set[int]:
    used = expr_vars(ast.ret_expr)
    for stmt in ast.stmts:
        used |= stmt_uses(stmt)
    return used
