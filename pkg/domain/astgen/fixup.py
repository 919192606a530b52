import logging

from domain.catalog import ArgType, Catalog, HelperProto, MapSpecRequest

from .scope import annotate, stmt_uses
from .types import (
    Const,
    DeclHelperCall,
    DeclStackBuf,
    Expr,
    GuardedBlock,
    MapRef,
    PredKind,
    Predicate,
    ProgramAst,
    Stmt,
    Var,
    VarInfo,
)

logger = logging.getLogger(__name__)


def _ref_helpers(ast: ProgramAst, catalog: Catalog, *, acquire: bool, kind: str) -> list[HelperProto]:
    available = catalog.helpers_for(ast.prog_type)
    out = []
    for helper_id in sorted(available):
        helper = catalog.helper(helper_id)
        if (helper.acquires_ref if acquire else helper.releases_ref) == kind:
            out.append(helper)
    return out


def _ensure_map(ast: ProgramAst, catalog: Catalog, helper: HelperProto) -> int:
    allowed = catalog.maps_for(ast.prog_type, helper.id)
    for ordinal, dep in enumerate(ast.map_deps):
        if dep.map_type in allowed and catalog.map_prog_compatible(ast.prog_type, dep):
            return ordinal
    map_type = min(allowed)
    constraints = catalog.map_attr_constraints(map_type)
    ast.map_deps.append(
        MapSpecRequest(
            map_type=map_type,
            key_size=constraints.key_size.candidates()[0],
            value_size=constraints.value_size.candidates()[0],
            max_entries=constraints.max_entries.candidates()[0],
        )
    )
    return len(ast.map_deps) - 1


def _filler_args(ast: ProgramAst, catalog: Catalog, helper: HelperProto, ref: Expr | None) -> tuple[Expr, ...] | None:
    args: list[Expr] = []
    for kind in helper.args:
        if kind is ArgType.PTR_TO_REF and ref is not None:
            args.append(ref)
        elif kind is ArgType.CONST_MAP_PTR:
            args.append(MapRef(_ensure_map(ast, catalog, helper)))
        elif kind is ArgType.CONST_ALLOC_SIZE_OR_ZERO:
            args.append(Const(8))
        elif kind is ArgType.ANYTHING:
            args.append(Const(0))
        else:
            return None
    return tuple(args)


def _ref_index(helper: HelperProto) -> int:
    return helper.args.index(ArgType.PTR_TO_REF)


def _released_vars(ast: ProgramAst, catalog: Catalog) -> set[int]:
    out = set()
    for call in ast.helper_calls():
        helper = catalog.helper_by_name(call.helper)
        if helper.releases_ref:
            arg = call.args[_ref_index(helper)]
            if isinstance(arg, Var):
                out.add(arg.id)
    return out


def _substitute_producers(stmts: list[Stmt], ast: ProgramAst, catalog: Catalog, info: dict[int, VarInfo]) -> None:
    i = 0
    while i < len(stmts):
        stmt = stmts[i]
        if isinstance(stmt, GuardedBlock):
            _substitute_producers(stmt.body, ast, catalog, info)
            i += 1
            continue
        helper = catalog.helper_by_name(stmt.helper) if isinstance(stmt, DeclHelperCall) else None
        if helper is None or not helper.releases_ref:
            i += 1
            continue
        index = _ref_index(helper)
        arg = stmt.args[index]
        if isinstance(arg, Var) and arg.id in info and info[arg.id].ref_kind == helper.releases_ref:
            i += 1
            continue
        producers = _ref_helpers(ast, catalog, acquire=True, kind=helper.releases_ref)
        args = _filler_args(ast, catalog, producers[0], None) if producers else None
        if args is None:
            logger.debug("no producer for reference kind %s", helper.releases_ref)
            i += 1
            continue
        ref = max(ast.max_var(), max(info, default=-1)) + 1
        producer = DeclHelperCall(ref, producers[0].name, args)
        info[ref] = VarInfo(producers[0].ret.value_type, region=8, ref_kind=producers[0].acquires_ref)
        released = DeclHelperCall(stmt.var, stmt.helper, stmt.args[:index] + (Var(ref),) + stmt.args[index + 1 :])
        guard = GuardedBlock([Predicate(PredKind.NOT_NULL, ref)], [released])
        stmts[i : i + 1] = [producer, guard]
        if isinstance(arg, Var):
            _drop_placeholder(ast, arg.id)
        # 占位缓冲区可能就在本列表里被删掉
        i = next(j for j, s in enumerate(stmts) if s is guard) + 1


def _drop_placeholder(ast: ProgramAst, var: int) -> None:
    # 被替换掉的占位缓冲区如果不再被使用就删掉
    if any(var in stmt_uses(stmt) for stmt in ast.stmts):
        return

    def prune(stmts: list[Stmt]) -> None:
        for j, stmt in enumerate(stmts):
            if isinstance(stmt, DeclStackBuf) and stmt.var == var:
                del stmts[j]
                return
            if isinstance(stmt, GuardedBlock):
                prune(stmt.body)

    prune(ast.stmts)


def _release_call(ast: ProgramAst, catalog: Catalog, ref: int, kind: str) -> DeclHelperCall | None:
    releasers = _ref_helpers(ast, catalog, acquire=False, kind=kind)
    if not releasers:
        return None
    helper = releasers[ref % len(releasers)]
    args = _filler_args(ast, catalog, helper, Var(ref))
    return DeclHelperCall(None, helper.name, args) if args is not None else None


def _balance(stmts: list[Stmt], ast: ProgramAst, catalog: Catalog, info: dict[int, VarInfo], released: set[int]) -> None:
    i = 0
    while i < len(stmts):
        stmt = stmts[i]
        if isinstance(stmt, GuardedBlock):
            _balance(stmt.body, ast, catalog, info, released)
            i += 1
            continue
        var = stmt.var
        if var is None or var in released or var not in info or not info[var].ref_kind:
            i += 1
            continue
        release = _release_call(ast, catalog, var, info[var].ref_kind)
        if release is None:
            i += 1
            continue
        released.add(var)
        not_null = Predicate(PredKind.NOT_NULL, var)
        last_use = max((j for j in range(i + 1, len(stmts)) if var in stmt_uses(stmts[j])), default=None)
        if last_use is None:
            stmts.insert(i + 1, GuardedBlock([not_null], [release]))
        elif isinstance(stmts[last_use], GuardedBlock) and not_null in stmts[last_use].predicates:
            block = stmts[last_use]
            inner = [p for p in block.predicates if p != not_null]
            body = [GuardedBlock(inner, block.body)] if inner else block.body
            stmts[last_use] = GuardedBlock([not_null], body + [release])
        else:
            stmts.insert(last_use + 1, GuardedBlock([not_null], [release]))
        i += 1


def fixup_references(ast: ProgramAst, catalog: Catalog) -> ProgramAst:
    """引用修复：为释放调用补齐来源，为每个获取调用在最后一次使用后补上释放。

    原地修改并返回同一个 AST；已平衡的 AST 保持不变。
    """
    info = annotate(ast, catalog)
    _substitute_producers(ast.stmts, ast, catalog, info)
    info = annotate(ast, catalog)
    _balance(ast.stmts, ast, catalog, info, _released_vars(ast, catalog))
    return ast
