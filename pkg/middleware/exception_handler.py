import logging
from fastapi import Request, status, HTTPException
from fastapi.responses import JSONResponse
from fastapi.exceptions import RequestValidationError
from pydantic import ValidationError

from domain.astgen import AstParseError, GenerationError
from domain.catalog import CatalogError
from domain.isa import BytecodeError
from domain.lower import CompileError, LoadError
from domain.runtime import SyscallError
from domain.verifier import VerifierError

logger = logging.getLogger(__name__)

_NOT_FOUND_CODES = {"no_such_map", "no_such_prog", "no_such_target"}


def _error(status_code: int, exc: Exception, detail) -> JSONResponse:
    return JSONResponse(status_code=status_code, content={"error": type(exc).__name__, "detail": detail})


async def http_exception_handler(request: Request, exc: HTTPException):
    detail = exc.detail if exc.detail is not None else str(exc)
    return JSONResponse(
        status_code=exc.status_code,
        content={"error": "HTTPException", "detail": detail},
        headers=exc.headers,
    )


async def validation_exception_handler(request: Request, exc: RequestValidationError | ValidationError):
    return JSONResponse(
        status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
        content={"error": "Validation Error", "detail": exc.errors()},
    )


async def rejection_exception_handler(request: Request, exc: Exception):
    """程序被拒（解析、编译、加载、校验）一律 400，detail 带稳定的 rule_id。"""
    if isinstance(exc, VerifierError):
        detail = {"rule_id": exc.rule_id, "category": exc.category.value, "insn_index": exc.insn_index, "message": exc.message}
    elif isinstance(exc, BytecodeError):
        detail = {"rule_id": exc.rule_id, "insn_index": exc.insn_index, "message": exc.message}
    elif isinstance(exc, LoadError):
        detail = {"rule_id": exc.rule_id, "message": exc.message}
    elif isinstance(exc, CompileError):
        detail = {"reason": exc.reason}
    elif isinstance(exc, AstParseError):
        detail = {"line": exc.line, "message": exc.message}
    else:
        detail = {"message": str(exc)}
    logger.debug("%s %s rejected: %s", request.method, request.url.path, detail)
    return _error(status.HTTP_400_BAD_REQUEST, exc, detail)


async def syscall_exception_handler(request: Request, exc: SyscallError):
    code = status.HTTP_404_NOT_FOUND if exc.code in _NOT_FOUND_CODES else status.HTTP_400_BAD_REQUEST
    return _error(code, exc, {"code": exc.code, "message": exc.message})


async def global_exception_handler(request: Request, exc: Exception):
    logger.exception(
        "Unhandled exception %s %s",
        request.method,
        request.url.path,
        exc_info=(type(exc), exc, exc.__traceback__),
    )
    return JSONResponse(
        status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
        content={"error": "Internal Server Error", "detail": str(exc)},
    )


REJECTIONS = (VerifierError, BytecodeError, LoadError, CompileError, AstParseError, GenerationError, CatalogError)
