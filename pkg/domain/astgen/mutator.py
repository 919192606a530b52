import copy
import logging
import random
from dataclasses import dataclass

from domain.catalog import ArgType, Catalog, CatalogService

from .fixup import fixup_references
from .generator import CallSite, GenScope, within_budget
from .safety import wrap_safety_checks
from .scope import call_info, region_of, used_vars
from .types import (
    DeclArith,
    DeclHelperCall,
    DeclLiteral,
    DeclStackBuf,
    GenConfig,
    GenerationError,
    GuardedBlock,
    MapRef,
    PredKind,
    ProgramAst,
    Stmt,
)

logger = logging.getLogger(__name__)

_FIXED_KINDS = (ArgType.PTR_TO_CTX, ArgType.PTR_TO_REF)
_MAP_ARGS = (ArgType.PTR_TO_MAP_KEY, ArgType.PTR_TO_MAP_VALUE, ArgType.PTR_TO_UNINIT_MAP_VALUE)
_PURE = (DeclLiteral, DeclStackBuf, DeclArith)


@dataclass
class _Site:
    container: list[Stmt]
    pos: int
    call: DeclHelperCall
    visible: tuple[int, ...]
    nonnull: frozenset[int]


def _collect(stmts: list[Stmt], visible: list[int], nonnull: frozenset[int], out: list[_Site]) -> None:
    visible = list(visible)
    for pos, stmt in enumerate(stmts):
        if isinstance(stmt, GuardedBlock):
            if len(stmt.body) == 1 and isinstance(stmt.body[0], DeclHelperCall):
                out.append(_Site(stmts, pos, stmt.body[0], tuple(visible), nonnull))
            else:
                inner = nonnull | {p.var for p in stmt.predicates if p.kind is PredKind.NOT_NULL}
                _collect(stmt.body, visible, inner, out)
            continue
        if isinstance(stmt, DeclHelperCall):
            out.append(_Site(stmts, pos, stmt, tuple(visible), nonnull))
        if stmt.var is not None:
            visible.append(stmt.var)


def _mutable_args(site: _Site, catalog: Catalog, used: set[int]) -> list[int]:
    helper = catalog.helper_by_name(site.call.helper)
    # 生产者的返回值还被别处使用时不动它，避免下游守卫失效
    if helper.releases_ref or (site.call.var is not None and site.call.var in used):
        return []
    return [i for i, kind in enumerate(helper.args) if kind not in _FIXED_KINDS]


def prune_unused(ast: ProgramAst) -> None:
    """删除不再被使用的纯声明和上下文绑定。"""
    while True:
        used = used_vars(ast)
        removed = False

        def sweep(stmts: list[Stmt]) -> None:
            nonlocal removed
            keep = []
            for stmt in stmts:
                if isinstance(stmt, _PURE) and stmt.var not in used:
                    removed = True
                    continue
                if isinstance(stmt, GuardedBlock):
                    sweep(stmt.body)
                keep.append(stmt)
            stmts[:] = keep

        sweep(ast.stmts)
        if not removed:
            break
    ast.ctx_bindings = [b for b in ast.ctx_bindings if b.var in used]


def _rewrite_calls(stmts: list[Stmt], rewrite) -> None:
    for pos, stmt in enumerate(stmts):
        if isinstance(stmt, GuardedBlock):
            _rewrite_calls(stmt.body, rewrite)
        elif isinstance(stmt, DeclHelperCall):
            stmts[pos] = rewrite(stmt)


def renumber_maps(ast: ProgramAst) -> dict[int, int]:
    """丢弃未被引用的 map 依赖并按引用顺序重新编号，返回旧序号到新序号的映射。"""
    referenced: list[int] = []
    for call in ast.helper_calls():
        for arg in call.args:
            if isinstance(arg, MapRef) and arg.ordinal not in referenced:
                referenced.append(arg.ordinal)
    ordinals = sorted(referenced)
    mapping = {old: new for new, old in enumerate(ordinals)}

    def rewrite(call: DeclHelperCall) -> DeclHelperCall:
        args = tuple(MapRef(mapping[a.ordinal]) if isinstance(a, MapRef) else a for a in call.args)
        return DeclHelperCall(call.var, call.helper, args)

    _rewrite_calls(ast.stmts, rewrite)
    ast.map_deps = [ast.map_deps[old] for old in ordinals]
    return mapping


def _mutate_once(ast: ProgramAst, rng: random.Random, catalog: Catalog, cfg: GenConfig) -> bool:
    sites: list[_Site] = []
    _collect(ast.stmts, [], frozenset(), sites)
    used = used_vars(ast)
    candidates = [(site, _mutable_args(site, catalog, used)) for site in sites]
    candidates = [(site, args) for site, args in candidates if args]
    if not candidates:
        return False
    site, mutable = rng.choice(candidates)
    index = rng.choice(mutable)
    helper = catalog.helper_by_name(site.call.helper)

    regen = {index}
    kind = helper.args[index]
    if kind is ArgType.CONST_MAP_PTR:
        regen |= {i for i, k in enumerate(helper.args) if k in _MAP_ARGS}
    if kind.is_mem and index + 1 < len(helper.args):
        regen.add(index + 1)

    scope = GenScope(catalog, ast, cfg, rng, visible=list(site.visible), nonnull=site.nonnull)
    call_site = CallSite(helper, cfg.max_depth)
    args = list(site.call.args)
    for i, arg_kind in enumerate(helper.args):
        call_site.index = i
        if i in regen:
            args[i] = scope.gen_argument(arg_kind, call_site)
        elif arg_kind is ArgType.CONST_MAP_PTR:
            call_site.map_spec = ast.map_deps[args[i].ordinal]
        elif arg_kind.is_mem:
            call_site.region = region_of(args[i], scope.info)

    call = DeclHelperCall(site.call.var, site.call.helper, tuple(args))
    if call.var is not None:
        scope.info[call.var] = call_info(call, ast, scope.info, catalog)
    stmt = wrap_safety_checks(call, scope.info, catalog, site.nonnull)
    site.container[site.pos : site.pos + 1] = scope.pending + [stmt]

    prune_unused(ast)
    renumber_maps(ast)
    fixup_references(ast, catalog)
    return True


def mutate_program(
    ast: ProgramAst,
    rng: random.Random,
    *,
    catalog: Catalog | None = None,
    cfg: GenConfig | None = None,
) -> ProgramAst:
    """重新生成某个 helper 调用的一个参数，并重跑守卫包装、引用修复与 map 依赖整理。

    返回新的 AST，输入不被修改；重试用尽时返回输入的副本。
    """
    catalog = catalog or CatalogService.get()
    cfg = cfg or GenConfig()
    for attempt in range(cfg.max_retries):
        mutant = copy.deepcopy(ast)
        try:
            if not _mutate_once(mutant, rng, catalog, cfg):
                break
        except GenerationError as exc:
            logger.debug("mutation attempt %d failed: %s", attempt, exc)
            continue
        if within_budget(mutant, cfg, catalog):
            return mutant
    return copy.deepcopy(ast)
