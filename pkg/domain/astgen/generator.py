import copy
import logging
import random
from dataclasses import dataclass

from domain.catalog import (
    ArgType,
    Catalog,
    CatalogService,
    ContextField,
    HelperProto,
    MapSpecRequest,
    MapTypeId,
    ProgramTypeId,
    RetType,
)
from domain.catalog import VerifierValueType as V

from .fixup import fixup_references
from .safety import safety_predicates, wrap_safety_checks
from .scope import annotate, call_info, estimate_paths, region_of, stack_bytes, stmt_info
from .types import (
    ARITH_OPS,
    Const,
    CtxBinding,
    CtxRef,
    DeclArith,
    DeclHelperCall,
    DeclLiteral,
    DeclStackBuf,
    Expr,
    GenConfig,
    GenerationError,
    GuardedBlock,
    MapRef,
    ProgramAst,
    Stmt,
    Var,
    VarInfo,
)

logger = logging.getLogger(__name__)

INTERESTING_VALUES = (0, 1, -1, 2, 7, 8, 64, 255, 4096, 0x7FFFFFFF, 0xFFFFFFFF, 1 << 32, -(1 << 63))
STRATEGIES = ("direct", "context", "helper")

_TAIL_CALL = "tail_call"
_UPDATE_FLAGS = ("map_update_elem", 3)
_MAP_ARGS = (ArgType.PTR_TO_MAP_KEY, ArgType.PTR_TO_MAP_VALUE, ArgType.PTR_TO_UNINIT_MAP_VALUE)
_SHIFTS = ("lsh", "rsh", "arsh")
_DIVS = ("div", "mod")


@dataclass
class CallSite:
    """正在生成参数的调用：已选定的 map、上一个内存参数的区域大小。"""

    helper: HelperProto
    depth: int
    index: int = 0
    guard_free: bool = False
    map_spec: MapSpecRequest | None = None
    region: int | None = None


class GenScope:
    """生成/变异时的作用域：可见变量、类型信息、栈用量与待插入的前置语句。"""

    _STATE = ("ast", "info", "next_var", "stack_used", "visible", "pending")

    def __init__(
        self,
        catalog: Catalog,
        ast: ProgramAst,
        cfg: GenConfig,
        rng: random.Random,
        *,
        visible: list[int] | None = None,
        nonnull: set[int] | frozenset[int] = frozenset(),
    ):
        self.catalog = catalog
        self.ast = ast
        self.cfg = cfg
        self.rng = rng
        self.pt = ast.prog_type
        self.context = catalog.program(self.pt).context
        self.info: dict[int, VarInfo] = annotate(ast, catalog)
        self.next_var = ast.max_var() + 1
        self.stack_used = stack_bytes(ast)
        if visible is None:
            visible = [s.var for s in ast.stmts if not isinstance(s, GuardedBlock) and s.var is not None]
        self.visible = list(visible)
        self.nonnull = set(nonnull)
        self.pending: list[Stmt] = []

    def checkpoint(self) -> dict:
        return copy.deepcopy({name: getattr(self, name) for name in self._STATE})

    def restore(self, snapshot: dict) -> None:
        for name, value in snapshot.items():
            setattr(self, name, value)

    # 基础设施

    def new_var(self) -> int:
        var = self.next_var
        self.next_var += 1
        return var

    def charge(self, nbytes: int) -> None:
        if self.stack_used + nbytes > self.cfg.stack_budget:
            raise GenerationError(f"stack budget exhausted: {self.stack_used}+{nbytes}")
        self.stack_used += nbytes

    def declare(self, stmt: Stmt) -> Var:
        """登记一条前置声明，返回其变量。"""
        self.charge(-(-stmt.size // 8) * 8 if isinstance(stmt, DeclStackBuf) else 8)
        self.info[stmt.var] = stmt_info(stmt, self.ast, self.info, self.catalog)
        self.pending.append(stmt)
        self.visible.append(stmt.var)
        return Var(stmt.var)

    def visible_vars(self) -> list[int]:
        return [b.var for b in self.ast.ctx_bindings] + self.visible

    def pick_strategy(self, allowed: list[str]) -> str:
        table = self.cfg.weights.model_dump()
        names = [s for s in STRATEGIES if s in allowed]
        return self.rng.choices(names, weights=[table[n] for n in names])[0]

    def readable_fields(self, accepted: frozenset[V] | set[V]) -> list[ContextField]:
        return [f for f in self.catalog.context_fields(self.pt, write=False) if f.yields in accepted]

    def bind_ctx(self, name: str) -> Var:
        # 每个上下文字段只绑定一次
        for binding in self.ast.ctx_bindings:
            if binding.field == name:
                return Var(binding.var)
        self.charge(8)
        var = self.new_var()
        self.ast.ctx_bindings.append(CtxBinding(var, name))
        self.info[var] = VarInfo(self.context.field(name).yields, ctx_field=name)
        return Var(var)

    # map 依赖

    def sample_map_spec(self, map_type: MapTypeId) -> MapSpecRequest:
        constraints = self.catalog.map_attr_constraints(map_type)
        flags = 0
        for group in constraints.flag_groups:
            if self.rng.random() < 0.3:
                flags |= int(self.rng.choice(group))
        flags &= ~self.catalog.program(self.pt).forbidden_flag_mask
        return MapSpecRequest(
            map_type=map_type,
            key_size=constraints.key_size.sample(self.rng, cap=16),
            value_size=constraints.value_size.sample(self.rng, cap=self.cfg.max_buffer),
            max_entries=constraints.max_entries.sample(self.rng, cap=64),
            flags=flags,
        )

    def request_map(self, helper: HelperProto) -> MapRef:
        allowed = sorted(self.catalog.maps_for(self.pt, helper.id))
        if not allowed:
            raise GenerationError(f"no map type for {helper.name} under {self.pt.name}")
        existing = [i for i, dep in enumerate(self.ast.map_deps) if dep.map_type in allowed]
        if existing and self.rng.random() < 0.6:
            return MapRef(self.rng.choice(existing))
        self.ast.map_deps.append(self.sample_map_spec(self.rng.choice(allowed)))
        return MapRef(len(self.ast.map_deps) - 1)

    # 取值策略

    def literal(self, value: int) -> Expr:
        if self.rng.random() < 0.3:
            return self.declare(DeclLiteral(self.new_var(), value))
        return Const(value)

    def buffer(self, size: int, *, reuse: bool = True) -> Var:
        if reuse and self.rng.random() < 0.3:
            candidates = [
                v for v in self.visible_vars() if self.info[v].is_buffer and (self.info[v].region or 0) >= size
            ]
            if candidates:
                return Var(self.rng.choice(candidates))
        return self.declare(DeclStackBuf(self.new_var(), size))

    def producers(self, accepted, *, region: bool = False, acquire: bool = True) -> list[HelperProto]:
        out = []
        for helper_id in sorted(self.catalog.helpers_for(self.pt)):
            helper = self.catalog.helper(helper_id)
            if helper.name == _TAIL_CALL or helper.ret is RetType.VOID:
                continue
            vtype = helper.ret.value_type
            if vtype.non_null not in accepted and vtype not in accepted:
                continue
            if region and not vtype.has_mem_size:
                continue
            if helper.acquires_ref and not acquire:
                continue
            if helper.map_arg_index is not None and not self.catalog.maps_for(self.pt, helper.id):
                continue
            if ArgType.PTR_TO_SOCK_COMMON in helper.args and not self.readable_fields({V.PTR_TO_SOCK_COMMON}):
                continue
            out.append(helper)
        return out

    def produce(self, candidates: list[HelperProto], site: CallSite) -> Var:
        """以另一个 helper 的返回值作为参数；生产者自身不得需要守卫。"""
        call = self.emit_call(self.rng.choice(candidates), site.depth - 1, guard_free=True)
        if safety_predicates(call, self.info, self.catalog, self.nonnull):
            raise GenerationError(f"producer {call.helper} needs a guard")
        return self.declare(call)

    def emit_call(self, helper: HelperProto, depth: int, *, guard_free: bool = False) -> DeclHelperCall:
        site = CallSite(helper, depth, guard_free=guard_free)
        args: list[Expr] = []
        for index, kind in enumerate(helper.args):
            site.index = index
            args.append(self.gen_argument(kind, site))
        var = self.new_var() if helper.ret is not RetType.VOID else None
        return DeclHelperCall(var, helper.name, tuple(args))

    def gen_argument(self, kind: ArgType, site: CallSite) -> Expr:
        """为 site 的第 site.index 个参数生成表达式，前置语句进入 pending。"""
        if kind is ArgType.PTR_TO_CTX:
            return CtxRef()
        if kind is ArgType.CONST_MAP_PTR:
            ref = self.request_map(site.helper)
            site.map_spec = self.ast.map_deps[ref.ordinal]
            return ref
        if kind in _MAP_ARGS:
            if site.map_spec is None:
                raise GenerationError(f"{site.helper.name}: map key/value before map")
            size = site.map_spec.key_size if kind is ArgType.PTR_TO_MAP_KEY else site.map_spec.value_size
            return self.buffer(max(size, 1))
        if kind.is_mem:
            expr = self.gen_memory(kind, site)
            site.region = region_of(expr, self.info)
            return expr
        if kind is ArgType.CONST_ALLOC_SIZE_OR_ZERO:
            return self.literal(self.rng.randrange(8, self.cfg.max_buffer + 1, 8))
        if kind.is_size:
            return self.gen_size(kind, site)
        if kind is ArgType.PTR_TO_REF:
            # 占位缓冲区，引用修复会替换成真正的引用；预留替换变量的栈槽
            self.charge(8)
            return self.buffer(8, reuse=False)
        if kind is ArgType.PTR_TO_SOCK_COMMON:
            return self.gen_socket(kind, site)
        return self.gen_anything(site)

    def gen_memory(self, kind: ArgType, site: CallSite) -> Expr:
        accepted = self.catalog.compatible_value_types(kind)
        options = ["direct"]
        candidates = self.producers(accepted, region=True) if site.depth > 0 and not site.guard_free else []
        if candidates:
            options.append("helper")
        if self.pick_strategy(options) == "helper":
            return self.produce(candidates, site)
        return self.buffer(self.rng.randint(1, self.cfg.max_buffer))

    def gen_size(self, kind: ArgType, site: CallSite) -> Expr:
        if site.region is None:
            raise GenerationError(f"{site.helper.name}: size argument without memory region")
        low = 1 if kind is ArgType.CONST_SIZE else 0
        if site.region < low:
            raise GenerationError(f"{site.helper.name}: region too small for a non-zero size")
        options = ["direct"]
        fields = self.readable_fields({V.SCALAR})
        candidates = self.producers({V.SCALAR}) if site.depth > 0 else []
        if not site.guard_free:
            if fields:
                options.append("context")
            if candidates:
                options.append("helper")
        strategy = self.pick_strategy(options)
        if strategy == "context":
            return self.bind_ctx(self.rng.choice(fields).name)
        if strategy == "helper":
            return self.produce(candidates, site)
        return self.literal(self.rng.randint(low, site.region))

    def gen_socket(self, kind: ArgType, site: CallSite) -> Expr:
        accepted = self.catalog.compatible_value_types(kind)
        fields = self.readable_fields(accepted)
        candidates = self.producers(accepted, acquire=False) if site.depth > 0 and not site.guard_free else []
        options = (["context"] if fields else []) + (["helper"] if candidates else [])
        if not options:
            raise GenerationError(f"no {kind} producer under {self.pt.name}")
        if self.pick_strategy(options) == "helper":
            return self.produce(candidates, site)
        return self.bind_ctx(self.rng.choice(fields).name)

    def gen_anything(self, site: CallSite) -> Expr:
        helper = site.helper
        if helper.name == _TAIL_CALL and site.map_spec is not None:
            # 越界的 tail call 下标同样合法
            return self.literal(self.rng.randrange(0, 2 * max(site.map_spec.max_entries, 1)))
        if (helper.name, site.index) == _UPDATE_FLAGS:
            return self.literal(self.rng.choice((0, 1, 2)))
        if helper.releases_ref:
            return Const(0)
        accepted = self.catalog.compatible_value_types(ArgType.ANYTHING)
        fields = self.readable_fields(accepted)
        candidates = self.producers(accepted, acquire=False) if site.depth > 0 else []
        options = ["direct"] + (["context"] if fields else []) + (["helper"] if candidates else [])
        strategy = self.pick_strategy(options)
        if strategy == "context":
            return self.bind_ctx(self.rng.choice(fields).name)
        if strategy == "helper":
            return self.produce(candidates, site)
        roll = self.rng.random()
        reusable = [v for v in self.visible_vars() if not self.info[v].ref_kind]
        if roll < 0.2 and reusable:
            return Var(self.rng.choice(reusable))
        if roll < 0.35:
            return self.arith()
        return self.literal(self.rng.choice(INTERESTING_VALUES))

    def scalar_operand(self, accept=lambda info: True) -> Expr:
        scalars = [
            v for v in self.visible_vars() if self.info[v].vtype is V.SCALAR and accept(self.info[v])
        ]
        if scalars and self.rng.random() < 0.6:
            return Var(self.rng.choice(scalars))
        return Const(self.rng.choice(INTERESTING_VALUES))

    def arith(self) -> Var:
        op = self.rng.choice(ARITH_OPS)
        lhs = self.scalar_operand()
        if op in _SHIFTS:
            rhs = self.scalar_operand(lambda i: i.const is None or 0 <= i.const < 64)
            if isinstance(rhs, Const):
                rhs = Const(self.rng.randrange(64))
        elif op in _DIVS:
            rhs = self.scalar_operand(lambda i: i.const != 0)
            if isinstance(rhs, Const) and rhs.value == 0:
                rhs = Const(self.rng.randint(1, 255))
        else:
            rhs = self.scalar_operand()
        return self.declare(DeclArith(self.new_var(), op, lhs, rhs))

    # 语句

    def flush(self, stmt: Stmt) -> None:
        self.ast.stmts.extend(self.pending)
        self.ast.stmts.append(stmt)
        self.pending = []

    def emit_target(self, helper: HelperProto) -> Stmt:
        """围绕目标 helper 生成一条（可能带守卫的）调用语句。"""
        self.pending = []
        call = self.emit_call(helper, self.cfg.max_depth)
        if call.var is not None:
            self.charge(8)
            self.info[call.var] = call_info(call, self.ast, self.info, self.catalog)
        stmt = wrap_safety_checks(call, self.info, self.catalog, self.nonnull)
        self.flush(stmt)
        if stmt is call and call.var is not None:
            self.visible.append(call.var)
        return stmt

    def emit_arith(self) -> None:
        self.pending = []
        self.arith()
        self.ast.stmts.extend(self.pending)
        self.pending = []

    def pick_return(self) -> Expr:
        scalars = [v for v in self.visible if self.info[v].vtype is V.SCALAR and not self.info[v].is_buffer]
        if scalars and self.rng.random() < 0.5:
            return Var(self.rng.choice(scalars))
        return Const(self.rng.choice((0, 1, 2)))


def within_budget(ast: ProgramAst, cfg: GenConfig, catalog: Catalog) -> bool:
    trial = fixup_references(copy.deepcopy(ast), catalog)
    return estimate_paths(trial.stmts) <= cfg.path_budget and stack_bytes(trial) <= cfg.stack_budget


def _attempt(catalog: Catalog, pt: ProgramTypeId, cfg: GenConfig, rng: random.Random) -> ProgramAst | None:
    scope = GenScope(catalog, ProgramAst(pt), cfg, rng)
    helpers = [catalog.helper(h) for h in sorted(catalog.helpers_for(pt))]
    targets = rng.randint(max(1, (cfg.stmt_budget + 1) // 2), cfg.stmt_budget)
    for _ in range(targets):
        snapshot = scope.checkpoint()
        try:
            if rng.random() < 0.15:
                scope.emit_arith()
            else:
                scope.emit_target(rng.choice(helpers))
            if not within_budget(scope.ast, cfg, catalog):
                raise GenerationError("path or stack budget exceeded")
        except GenerationError as exc:
            logger.debug("target dropped: %s", exc)
            scope.restore(snapshot)
    if not scope.ast.helper_calls():
        return None
    scope.ast.ret_expr = scope.pick_return()
    return fixup_references(scope.ast, catalog)


def _fallback(catalog: Catalog, pt: ProgramTypeId) -> ProgramAst:
    for helper_id in sorted(catalog.helpers_for(pt)):
        helper = catalog.helper(helper_id)
        if not helper.args and helper.ret is RetType.SCALAR:
            return ProgramAst(pt, stmts=[DeclHelperCall(0, helper.name, ())], ret_expr=Var(0))
    raise GenerationError(f"{pt.name}: no argument-free helper to fall back on")


def generate_program(
    cfg: GenConfig | None = None,
    pt: ProgramTypeId | None = None,
    *,
    catalog: Catalog | None = None,
    rng: random.Random | None = None,
) -> ProgramAst:
    """随机选取程序类型（或使用 pt），围绕若干目标 helper 生成程序。

    同一 (seed, catalog, cfg) 产生相同结果；rng 用于在一个随机流里连续生成。
    """
    cfg = cfg or GenConfig()
    catalog = catalog or CatalogService.get()
    rng = rng or random.Random(cfg.seed)
    pt = ProgramTypeId(pt) if pt is not None else rng.choice(sorted(ProgramTypeId))
    for attempt in range(cfg.max_retries):
        ast = _attempt(catalog, pt, cfg, rng)
        if ast is not None:
            return ast
        logger.debug("generation attempt %d for %s produced no helper call", attempt, pt.name)
    return _fallback(catalog, pt)


def gen_argument(kind: ArgType, scope: GenScope, site: CallSite) -> tuple[Expr, list[Stmt]]:
    """生成单个参数；返回表达式与需要插在调用之前的语句。"""
    before = len(scope.pending)
    expr = scope.gen_argument(ArgType(kind), site)
    return expr, scope.pending[before:]
