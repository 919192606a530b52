from .service import DEFAULT_CATALOG_PATH, Catalog, CatalogError, CatalogService
from .types import (
    ArgType,
    AttachKind,
    CatalogDocument,
    ContextDescriptor,
    ContextField,
    HelperProto,
    LockContext,
    MapFlag,
    MapSpecRequest,
    MapTypeId,
    MapTypeSpec,
    ProgramTypeId,
    ProgramTypeSpec,
    RetType,
    SizeConstraint,
    VerifierValueType,
)

__all__ = [
    "DEFAULT_CATALOG_PATH",
    "Catalog",
    "CatalogError",
    "CatalogService",
    "ArgType",
    "AttachKind",
    "CatalogDocument",
    "ContextDescriptor",
    "ContextField",
    "HelperProto",
    "LockContext",
    "MapFlag",
    "MapSpecRequest",
    "MapTypeId",
    "MapTypeSpec",
    "ProgramTypeId",
    "ProgramTypeSpec",
    "RetType",
    "SizeConstraint",
    "VerifierValueType",
]
