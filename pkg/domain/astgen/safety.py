from collections.abc import Iterable

from domain.catalog import ArgType, Catalog

from .scope import region_of
from .types import DeclHelperCall, GuardedBlock, PredKind, Predicate, Stmt, Var, VarInfo

_PRED_ORDER = {PredKind.NOT_NULL: 0, PredKind.SIZE_LE: 1, PredKind.NOT_ZERO: 2}


def safety_predicates(
    call: DeclHelperCall,
    info: dict[int, VarInfo],
    catalog: Catalog,
    nonnull: Iterable[int] = (),
) -> list[Predicate]:
    """调用前必须成立的检查；空列表表示可以直接调用。"""
    helper = catalog.helper_by_name(call.helper)
    nonnull = set(nonnull)
    preds: list[Predicate] = []
    for i, (kind, arg) in enumerate(zip(helper.args, call.args)):
        if not isinstance(arg, Var) or arg.id not in info:
            continue
        var = info[arg.id]
        if var.vtype.maybe_null and arg.id not in nonnull and var.vtype not in catalog.compatible_value_types(kind):
            preds.append(Predicate(PredKind.NOT_NULL, arg.id))
        if kind in (ArgType.CONST_SIZE, ArgType.CONST_SIZE_OR_ZERO) and var.const is None:
            region = region_of(call.args[i - 1], info) if i > 0 else None
            preds.append(Predicate(PredKind.SIZE_LE, arg.id, region or 0))
            if kind is ArgType.CONST_SIZE:
                preds.append(Predicate(PredKind.NOT_ZERO, arg.id))
    unique = list(dict.fromkeys(preds))
    # 空指针检查必须在最外层，引用修复依赖这一顺序
    return sorted(unique, key=lambda p: _PRED_ORDER[p.kind])


def wrap_safety_checks(
    call: DeclHelperCall,
    info: dict[int, VarInfo],
    catalog: Catalog,
    nonnull: Iterable[int] = (),
) -> Stmt:
    """把调用包进守卫块；参数全部安全时原样返回调用本身。"""
    preds = safety_predicates(call, info, catalog, nonnull)
    if not preds:
        return call
    return GuardedBlock(preds, [call])
