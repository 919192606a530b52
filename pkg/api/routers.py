from fastapi import FastAPI

from domain.astgen import api as programs
from domain.catalog import api as catalog
from domain.config import api as config
from domain.harness import api as fuzz
from domain.runtime import api as runtime
from domain.tasks import api as tasks


def include_routers(app: FastAPI):
    app.include_router(config.router)
    app.include_router(catalog.router)
    app.include_router(programs.router)
    app.include_router(runtime.router)
    app.include_router(fuzz.router)
    app.include_router(tasks.router)
