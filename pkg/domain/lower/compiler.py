import logging
from dataclasses import replace

from domain.astgen import (
    Const,
    CtxRef,
    DeclArith,
    DeclHelperCall,
    DeclLiteral,
    DeclStackBuf,
    Expr,
    GuardedBlock,
    MapRef,
    PredKind,
    ProgramAst,
    Stmt,
    Var,
)
from domain.astgen.scope import ARITH_CODES
from domain.catalog import Catalog, CatalogService, CatalogError, ProgramTypeId
from domain.isa import Instruction, RawProgram, RelocationRecord, SlotMap
from domain.isa import opcodes as op

from .types import CompileError, StackLayout, _round8

logger = logging.getLogger(__name__)

CTX_REG = 6
WIDTH_SIZES = {1: op.BPF_B, 2: op.BPF_H, 4: op.BPF_W, 8: op.BPF_DW}


def _fits_s32(value: int) -> bool:
    return -(1 << 31) <= value < (1 << 31)


def layout_stack(ast: ProgramAst) -> StackLayout:
    """朴素分配：上下文绑定在前，语句按出现顺序，从 r10-8 向下。"""
    layout = StackLayout()

    def alloc(var: int, nbytes: int) -> None:
        layout.size += _round8(nbytes)
        if layout.size > op.STACK_SIZE:
            raise CompileError(f"stack budget exceeded: {layout.size} > {op.STACK_SIZE} bytes")
        layout.offsets[var] = -layout.size

    for binding in ast.ctx_bindings:
        alloc(binding.var, 8)
    for stmt in ast.walk():
        if isinstance(stmt, DeclStackBuf):
            layout.buffers[stmt.var] = stmt.size
            alloc(stmt.var, stmt.size)
        elif not isinstance(stmt, GuardedBlock) and stmt.var is not None:
            alloc(stmt.var, 8)
    return layout


def _uses_ctx(ast: ProgramAst) -> bool:
    if ast.ctx_bindings:
        return True
    return any(isinstance(arg, CtxRef) for call in ast.helper_calls() for arg in call.args)


class _Emitter:
    def __init__(self, ast: ProgramAst, catalog: Catalog):
        self.ast = ast
        self.catalog = catalog
        self.layout = layout_stack(ast)
        self.insns: list[Instruction] = []
        self.relocations: list[RelocationRecord] = []
        self.patches: list[tuple[int, list[int]]] = []

    def emit(self, insn: Instruction) -> int:
        self.insns.append(insn)
        return len(self.insns) - 1

    def load(self, reg: int, expr: Expr) -> None:
        if isinstance(expr, Var):
            offset = self.layout.slot(expr.id)
            if self.layout.is_buffer(expr.id):
                self.emit(Instruction.mov64_reg(reg, op.FRAME_REG))
                self.emit(Instruction.alu64_imm(op.BPF_ADD, reg, offset))
            else:
                self.emit(Instruction.ldx(op.BPF_DW, reg, op.FRAME_REG, offset))
        elif isinstance(expr, Const):
            if _fits_s32(expr.value):
                self.emit(Instruction.mov64_imm(reg, expr.value))
            else:
                self.emit(Instruction.ld_imm64(reg, expr.value))
        elif isinstance(expr, MapRef):
            if expr.ordinal >= len(self.ast.map_deps):
                raise CompileError(f"&map_{expr.ordinal} has no map dependency")
            index = self.emit(Instruction.ld_map(reg, expr.ordinal))
            self.relocations.append(RelocationRecord(index, expr.ordinal))
        elif isinstance(expr, CtxRef):
            self.emit(Instruction.mov64_reg(reg, CTX_REG))
        else:
            raise CompileError(f"cannot lower expression {expr!r}")

    def store(self, var: int, reg: int = 0) -> None:
        self.emit(Instruction.stx(op.BPF_DW, op.FRAME_REG, reg, self.layout.slot(var)))

    def prologue(self) -> None:
        if _uses_ctx(self.ast):
            self.emit(Instruction.mov64_reg(CTX_REG, 1))
        for chunk in self.layout.chunks():
            self.emit(Instruction.st_imm(op.BPF_DW, op.FRAME_REG, chunk, 0))
        context = self.catalog.program(self.ast.prog_type).context
        for binding in self.ast.ctx_bindings:
            field = context.field(binding.field)
            if field is None:
                raise CompileError(f"unknown context field {binding.field}")
            self.emit(Instruction.ldx(WIDTH_SIZES[field.width], 0, CTX_REG, field.offset))
            self.store(binding.var)

    def stmt(self, stmt: Stmt) -> None:
        if isinstance(stmt, DeclLiteral):
            if _fits_s32(stmt.value):
                self.emit(Instruction.st_imm(op.BPF_DW, op.FRAME_REG, self.layout.slot(stmt.var), stmt.value))
            else:
                self.emit(Instruction.ld_imm64(0, stmt.value))
                self.store(stmt.var)
        elif isinstance(stmt, DeclStackBuf):
            # 序幕已清零
            pass
        elif isinstance(stmt, DeclArith):
            self.arith(stmt)
        elif isinstance(stmt, DeclHelperCall):
            self.call(stmt)
        else:
            self.guard(stmt)

    def arith(self, stmt: DeclArith) -> None:
        code = ARITH_CODES.get(stmt.op)
        if code is None:
            raise CompileError(f"unknown arithmetic op {stmt.op}")
        self.load(0, stmt.lhs)
        if isinstance(stmt.rhs, Const) and _fits_s32(stmt.rhs.value):
            self.emit(Instruction.alu64_imm(code, 0, stmt.rhs.value))
        else:
            self.load(1, stmt.rhs)
            self.emit(Instruction.alu64_reg(code, 0, 1))
        self.store(stmt.var)

    def call(self, stmt: DeclHelperCall) -> None:
        try:
            helper = self.catalog.helper_by_name(stmt.helper)
        except CatalogError as exc:
            raise CompileError(str(exc)) from None
        if len(stmt.args) != len(helper.args):
            raise CompileError(f"{stmt.helper} takes {len(helper.args)} arguments, got {len(stmt.args)}")
        for i, arg in enumerate(stmt.args):
            self.load(1 + i, arg)
        self.emit(Instruction.call(helper.id))
        if stmt.var is not None:
            self.store(stmt.var)

    def guard(self, block: GuardedBlock) -> None:
        exits: list[int] = []
        for pred in block.predicates:
            self.load(1, Var(pred.var))
            if pred.kind is PredKind.SIZE_LE:
                if not _fits_s32(pred.bound):
                    raise CompileError(f"size bound {pred.bound} out of range")
                exits.append(self.emit(Instruction.jmp_imm(op.BPF_JGT, 1, pred.bound, 0)))
            else:
                exits.append(self.emit(Instruction.jmp_imm(op.BPF_JEQ, 1, 0, 0)))
        for inner in block.body:
            self.stmt(inner)
        # 跳到块后的下一条指令，块尾之后至少还有 return
        self.patches.append((len(self.insns), exits))

    def finish(self) -> list[Instruction]:
        slots = SlotMap(self.insns)
        for target, sources in self.patches:
            for index in sources:
                offset = slots.offset_to(index, target)
                self.insns[index] = replace(self.insns[index], offset=offset)
        return self.insns


def section_name(pt: ProgramTypeId, catalog: Catalog | None = None) -> str:
    return (catalog or CatalogService.get()).program(ProgramTypeId(pt)).section_name


def compile_ast(ast: ProgramAst, catalog: Catalog | None = None) -> RawProgram:
    """把（已修复引用的）AST 降级为字节码，map 引用留作重定位记录。"""
    catalog = catalog or CatalogService.get()
    emitter = _Emitter(ast, catalog)
    emitter.prologue()
    for stmt in ast.stmts:
        emitter.stmt(stmt)
    emitter.load(0, ast.ret_expr)
    emitter.emit(Instruction.exit())
    insns = emitter.finish()
    return RawProgram(int(ast.prog_type), section_name(ast.prog_type, catalog), insns, emitter.relocations)
