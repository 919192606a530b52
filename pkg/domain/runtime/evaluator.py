"""直接在 AST 上求值。与编译后的程序共用栈布局、上下文构造和辅助函数实现，
因此二者的返回值与辅助函数轨迹应当一致。"""

from collections.abc import Mapping
from typing import TYPE_CHECKING

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
from domain.isa import alu, opcodes
from domain.lower import ARITH_CODES, StackLayout, layout_stack

from .context import build_context
from .execution import Execution, TailCall
from .interpreter import run_interpreter
from .types import Engine, ExecResult, MemoryFault

if TYPE_CHECKING:
    from .kernel import SimKernel

U64 = opcodes.U64_MAX


class _TailCalled(Exception):
    def __init__(self, result: ExecResult):
        self.result = result


class AstEvaluator:
    def __init__(self, ast: ProgramAst, ex: Execution, layout: StackLayout, handles: Mapping[int, int]):
        self.ast = ast
        self.ex = ex
        self.layout = layout
        self.handles = handles

    def slot(self, var: int) -> int:
        return self.ex.frame_pointer + self.layout.slot(var)

    def value(self, expr: Expr) -> int:
        if isinstance(expr, Var):
            if self.layout.is_buffer(expr.id):
                return self.slot(expr.id)
            return self.ex.memory.load(self.slot(expr.id), 8)
        if isinstance(expr, Const):
            return expr.value & U64
        if isinstance(expr, MapRef):
            return self.ex.kernel.maps[self.handles[expr.ordinal]].object.base
        if isinstance(expr, CtxRef):
            return self.ex.ctx_address
        raise TypeError(f"cannot evaluate {expr!r}")

    def assign(self, var: int, value: int) -> None:
        self.ex.memory.store(self.slot(var), 8, value)

    def bind_context(self) -> None:
        desc = self.ex.kernel.catalog.program(self.ast.prog_type).context
        for binding in self.ast.ctx_bindings:
            f = desc.field(binding.field)
            self.assign(binding.var, self.ex.memory.load(self.ex.ctx_address + f.offset, f.width))

    def holds(self, block: GuardedBlock) -> bool:
        for pred in block.predicates:
            value = self.value(Var(pred.var))
            if pred.kind is PredKind.SIZE_LE:
                if value > pred.bound:
                    return False
            elif value == 0:
                return False
        return True

    def run(self, stmts: list[Stmt]) -> None:
        for stmt in stmts:
            if isinstance(stmt, DeclLiteral):
                self.assign(stmt.var, stmt.value)
            elif isinstance(stmt, DeclStackBuf):
                continue
            elif isinstance(stmt, DeclArith):
                lhs, rhs = self.value(stmt.lhs), self.value(stmt.rhs)
                self.assign(stmt.var, alu(ARITH_CODES[stmt.op], lhs, rhs))
            elif isinstance(stmt, DeclHelperCall):
                self.call(stmt)
            elif self.holds(stmt):
                self.run(stmt.body)

    def call(self, stmt: DeclHelperCall) -> None:
        proto = self.ex.kernel.catalog.helper_by_name(stmt.helper)
        args = [self.value(arg) for arg in stmt.args]
        args += [0] * (5 - len(args))
        result = self.ex.call_helper(proto.id, args)
        if isinstance(result, TailCall):
            # 尾调用成功后不再返回，剩下的交给字节码解释器
            self.ex.prog = result.target
            raise _TailCalled(run_interpreter(self.ex))
        if stmt.var is not None:
            self.assign(stmt.var, result)

    def evaluate(self) -> ExecResult:
        self.ex.memory.write(self.ex.stack.base, bytes(opcodes.STACK_SIZE))
        try:
            self.bind_context()
            self.run(self.ast.stmts)
            return self.ex.finish(self.value(self.ast.ret_expr))
        except _TailCalled as tail:
            return tail.result
        except MemoryFault as fault:
            self.ex.fault(fault, "eval")
            return self.ex.finish(0, aborted=True, reason=str(fault))


def evaluate_ast(
    ast: ProgramAst,
    prog_id: int,
    payload: bytes,
    kernel: "SimKernel",
    handles: Mapping[int, int],
) -> ExecResult:
    """按 AST 语义在内核上运行一次；prog_id 是同一 AST 编译加载后的程序。"""
    prog = kernel.programs[prog_id]
    frame = build_context(kernel, prog.prog_type, payload)
    ex = Execution(kernel, prog, frame, engine=Engine.INTERP, cpu=kernel.next_cpu())
    try:
        return AstEvaluator(ast, ex, layout_stack(ast), handles).evaluate()
    finally:
        kernel.memory.unmap(frame.region)
