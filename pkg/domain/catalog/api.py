from fastapi import APIRouter, HTTPException, Query

from api.response import success
from .service import CatalogService
from .types import MapTypeId, ProgramTypeId

router = APIRouter(prefix="/api/catalog", tags=["catalog"])


def _parse_enum(enum_cls, raw: str):
    if raw.upper() in enum_cls.__members__:
        return enum_cls[raw.upper()]
    try:
        return enum_cls(int(raw))
    except ValueError:
        raise HTTPException(status_code=404, detail=f"unknown {enum_cls.__name__}: {raw}") from None


@router.get("/program-types")
async def list_program_types():
    catalog = CatalogService.get()
    items = []
    for pt in ProgramTypeId:
        spec = catalog.program(pt)
        items.append({
            "id": int(pt),
            "name": pt.name,
            "section_name": spec.section_name,
            "attach_kind": spec.attach_kind.value,
            "test_runnable": spec.test_runnable,
            "helpers": len(catalog.helpers_for(pt)),
        })
    return success(items)


@router.get("/helpers")
async def list_helpers(prog_type: str | None = Query(None)):
    catalog = CatalogService.get()
    helpers = catalog.helpers
    if prog_type:
        available = catalog.helpers_for(_parse_enum(ProgramTypeId, prog_type))
        helpers = [h for h in helpers if h.id in available]
    return success([h.model_dump(mode="json") for h in helpers])


@router.get("/maps/{map_type}")
async def get_map_constraints(map_type: str):
    spec = CatalogService.get().map_attr_constraints(_parse_enum(MapTypeId, map_type))
    return success(spec.model_dump(mode="json"))
