import json
import logging
from functools import cached_property
from pathlib import Path

from pydantic import ValidationError

from .types import (
    ArgType,
    CatalogDocument,
    ContextField,
    HelperProto,
    MapTypeId,
    MapSpecRequest,
    MapTypeSpec,
    ProgramTypeId,
    ProgramTypeSpec,
    VerifierValueType,
)

logger = logging.getLogger(__name__)

DEFAULT_CATALOG_PATH = Path(__file__).parent / "data" / "catalog.json"


class CatalogError(Exception):
    """目录文件无法加载，或查询了目录不支持的组合。"""


def _flatten(entries: list[str], groups: dict[str, list[str]], stack: tuple[str, ...] = ()) -> list[str]:
    # "@group" 引用递归展开，直到没有未解析的 fallthrough
    out: list[str] = []
    for entry in entries:
        if not entry.startswith("@"):
            out.append(entry)
            continue
        name = entry[1:]
        if name not in groups:
            raise CatalogError(f"unresolved helper group {entry}")
        if name in stack:
            raise CatalogError(f"cyclic helper group {' -> '.join(stack + (name,))}")
        out.extend(_flatten(groups[name], groups, stack + (name,)))
    return out


class Catalog:
    """加载后不可变的领域知识表，可在 worker 之间只读共享。"""

    def __init__(self, document: CatalogDocument, source: str = "<memory>"):
        self.document = document
        self.source = source
        self._helpers_by_id: dict[int, HelperProto] = {}
        self._helpers_by_name: dict[str, HelperProto] = {}
        for helper in document.helpers:
            if helper.id in self._helpers_by_id or helper.name in self._helpers_by_name:
                raise CatalogError(f"duplicate helper {helper.name} ({helper.id})")
            self._helpers_by_id[helper.id] = helper
            self._helpers_by_name[helper.name] = helper

        self._map_types: dict[MapTypeId, MapTypeSpec] = {spec.id: spec for spec in document.map_types}
        self._programs: dict[ProgramTypeId, ProgramTypeSpec] = {spec.id: spec for spec in document.program_types}
        missing = set(ProgramTypeId) - set(self._programs)
        if missing:
            raise CatalogError(f"catalog misses program types: {sorted(m.name for m in missing)}")

        self._available: dict[ProgramTypeId, frozenset[int]] = {}
        for pt, spec in self._programs.items():
            ids = set()
            for name in _flatten(spec.available_helpers, document.helper_groups):
                helper = self._helpers_by_name.get(name)
                if helper is None:
                    raise CatalogError(f"{pt.name}: unknown helper {name}")
                ids.add(helper.id)
            if not ids:
                raise CatalogError(f"{pt.name}: no available helpers")
            self._available[pt] = frozenset(ids)
            for mt in spec.compatible_maps:
                if mt not in self._map_types:
                    raise CatalogError(f"{pt.name}: unknown map type {mt.name}")

        for helper in document.helpers:
            for arg in helper.args:
                if not document.arg_compat.get(arg):
                    raise CatalogError(f"{helper.name}: argument type {arg} has no compatible value types")

    @classmethod
    def from_file(cls, path: str | Path) -> "Catalog":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
            document = CatalogDocument.model_validate(raw)
        except (OSError, json.JSONDecodeError, ValidationError) as exc:
            raise CatalogError(f"failed to load catalog {path}: {exc}") from exc
        return cls(document, source=str(path))

    # 查询接口

    def helpers_for(self, pt: ProgramTypeId) -> frozenset[int]:
        return self._available[ProgramTypeId(pt)]

    def compatible_value_types(self, arg: ArgType) -> frozenset[VerifierValueType]:
        return frozenset(self.document.arg_compat[ArgType(arg)])

    def maps_for(self, pt: ProgramTypeId, helper_id: int) -> frozenset[MapTypeId]:
        helper = self.helper(helper_id)
        if helper.compatible_map_types is None:
            raise CatalogError(f"helper {helper.name} takes no map argument")
        return frozenset(helper.compatible_map_types) & frozenset(self.program(pt).compatible_maps)

    def map_attr_constraints(self, mt: MapTypeId) -> MapTypeSpec:
        return self._map_types[MapTypeId(mt)]

    def check_map_spec(self, spec: MapSpecRequest) -> str | None:
        """返回第一个不满足约束的属性名；全部满足时返回 None。"""
        constraints = self.map_attr_constraints(spec.map_type)
        if not constraints.key_size.allows(spec.key_size):
            return "key_size"
        if not constraints.value_size.allows(spec.value_size):
            return "value_size"
        if not constraints.max_entries.allows(spec.max_entries):
            return "max_entries"
        return constraints.check_flags(spec.flags)

    def map_prog_compatible(self, pt: ProgramTypeId, spec: MapSpecRequest) -> bool:
        program = self.program(pt)
        return spec.map_type in program.compatible_maps and not spec.flags & program.forbidden_flag_mask

    def context_fields(self, pt: ProgramTypeId, write: bool) -> list[ContextField]:
        fields = self.program(pt).context.fields
        return [f for f in fields if (f.write if write else f.read)]

    def program(self, pt: ProgramTypeId) -> ProgramTypeSpec:
        return self._programs[ProgramTypeId(pt)]

    def helper(self, helper_id: int) -> HelperProto:
        try:
            return self._helpers_by_id[helper_id]
        except KeyError:
            raise CatalogError(f"unknown helper id {helper_id}") from None

    def helper_by_name(self, name: str) -> HelperProto:
        try:
            return self._helpers_by_name[name]
        except KeyError:
            raise CatalogError(f"unknown helper {name}") from None

    def has_helper(self, helper_id: int) -> bool:
        return helper_id in self._helpers_by_id

    @property
    def helpers(self) -> list[HelperProto]:
        return list(self.document.helpers)

    @property
    def map_types(self) -> list[MapTypeSpec]:
        return list(self._map_types.values())

    @cached_property
    def helper_names(self) -> dict[int, str]:
        return {h.id: h.name for h in self.document.helpers}


class CatalogService:
    _current: Catalog | None = None

    @classmethod
    def load(cls, path: str | Path | None = None) -> Catalog:
        """加载目录；未指定路径时按 BPFLAB_CATALOG 覆盖，否则使用内置表。"""
        if path is None:
            from domain.config import ConfigService

            path = ConfigService.get("BPFLAB_CATALOG") or DEFAULT_CATALOG_PATH
        catalog = Catalog.from_file(path)
        logger.info(
            "catalog loaded from %s: %d helpers, %d map types",
            catalog.source,
            len(catalog.helpers),
            len(catalog.map_types),
        )
        return catalog

    @classmethod
    def get(cls) -> Catalog:
        if cls._current is None:
            cls._current = cls.load()
        return cls._current

    @classmethod
    def use(cls, catalog: Catalog | None) -> None:
        cls._current = catalog
