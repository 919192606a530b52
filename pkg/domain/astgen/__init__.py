from .fixup import fixup_references
from .generator import CallSite, GenScope, gen_argument, generate_program
from .mutator import mutate_program, prune_unused, renumber_maps
from .safety import safety_predicates, wrap_safety_checks
from .scope import annotate, estimate_paths, stack_bytes, used_vars
from .serializer import deserialize_ast, serialize_ast
from .service import AstgenService
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
    GenConfig,
    GenerationError,
    GenWeights,
    GuardedBlock,
    MapRef,
    PredKind,
    Predicate,
    ProgramAst,
    Stmt,
    Var,
    VarInfo,
)

__all__ = [
    "fixup_references",
    "CallSite",
    "GenScope",
    "gen_argument",
    "generate_program",
    "mutate_program",
    "prune_unused",
    "renumber_maps",
    "safety_predicates",
    "wrap_safety_checks",
    "annotate",
    "estimate_paths",
    "stack_bytes",
    "used_vars",
    "deserialize_ast",
    "serialize_ast",
    "AstgenService",
    "ARITH_OPS",
    "AstParseError",
    "Const",
    "CtxBinding",
    "CtxRef",
    "DeclArith",
    "DeclHelperCall",
    "DeclLiteral",
    "DeclStackBuf",
    "Expr",
    "GenConfig",
    "GenerationError",
    "GenWeights",
    "GuardedBlock",
    "MapRef",
    "PredKind",
    "Predicate",
    "ProgramAst",
    "Stmt",
    "Var",
    "VarInfo",
]
