import logging
from contextlib import asynccontextmanager

from api.routers import include_routers
from fastapi.middleware.cors import CORSMiddleware
from fastapi import FastAPI, HTTPException
from fastapi.exceptions import RequestValidationError
from pydantic import ValidationError
from middleware.exception_handler import (
    REJECTIONS,
    global_exception_handler,
    http_exception_handler,
    rejection_exception_handler,
    syscall_exception_handler,
    validation_exception_handler,
)
from dotenv import load_dotenv
from domain.catalog import CatalogService
from domain.config import VERSION
from domain.runtime import SyscallError
from domain.tasks import task_queue_service

load_dotenv()

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    catalog = CatalogService.get()
    logger.info("bpflab %s: %d program types, %d helpers", VERSION, len(catalog.document.program_types), len(catalog.helpers))
    await task_queue_service.start_worker()
    try:
        yield
    finally:
        await task_queue_service.stop_worker()


def create_app() -> FastAPI:
    app = FastAPI(
        title="bpflab",
        description="Generator, verifier model and coverage-guided fuzzer for a simulated eBPF subsystem",
        version=VERSION,
        lifespan=lifespan,
    )
    include_routers(app)
    app.add_exception_handler(HTTPException, http_exception_handler)
    app.add_exception_handler(RequestValidationError, validation_exception_handler)
    app.add_exception_handler(ValidationError, validation_exception_handler)
    for exc_cls in REJECTIONS:
        app.add_exception_handler(exc_cls, rejection_exception_handler)
    app.add_exception_handler(SyscallError, syscall_exception_handler)
    app.add_exception_handler(Exception, global_exception_handler)
    return app


app = create_app()
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)
if __name__ == "__main__":
    import uvicorn
    uvicorn.run("main:app", host="0.0.0.0", port=8000, reload=True)
