from .compiler import ARITH_CODES, compile_ast, layout_stack, section_name
from .loader import CONTAINER_VERSION, MAGIC, decode_container, encode_container, relocate
from .service import LowerService
from .types import CompileError, LoadError, StackLayout

__all__ = [
    "ARITH_CODES",
    "compile_ast",
    "layout_stack",
    "section_name",
    "CONTAINER_VERSION",
    "MAGIC",
    "decode_container",
    "encode_container",
    "relocate",
    "LowerService",
    "CompileError",
    "LoadError",
    "StackLayout",
]
