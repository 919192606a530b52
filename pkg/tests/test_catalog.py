"""Tests for catalog loading, closure of helper groups and map constraints."""

import json
from pathlib import Path

import pytest

from domain.catalog import (
    DEFAULT_CATALOG_PATH,
    ArgType,
    AttachKind,
    Catalog,
    CatalogError,
    MapSpecRequest,
    MapTypeId,
    ProgramTypeId,
    VerifierValueType,
)


def _write(tmp_path: Path, mutate) -> Path:
    raw = json.loads(DEFAULT_CATALOG_PATH.read_text(encoding="utf-8"))
    mutate(raw)
    path = tmp_path / "catalog.json"
    path.write_text(json.dumps(raw), encoding="utf-8")
    return path


class TestLoading:
    def test_bundled_catalog_covers_every_program_type(self, catalog: Catalog) -> None:
        for pt in ProgramTypeId:
            assert catalog.helpers_for(pt)

    def test_group_references_are_flattened(self, catalog: Catalog) -> None:
        kprobe = catalog.helpers_for(ProgramTypeId.KPROBE)
        assert catalog.helper_by_name("map_lookup_elem").id in kprobe
        assert catalog.helper_by_name("probe_read_user").id in kprobe

    def test_availability_differs_per_type(self, catalog: Catalog) -> None:
        xdp = catalog.helpers_for(ProgramTypeId.XDP)
        assert catalog.helper_by_name("probe_read_kernel").id not in xdp
        assert catalog.helper_by_name("skb_load_bytes").id in xdp

    def test_unresolved_group(self, tmp_path: Path) -> None:
        path = _write(tmp_path, lambda raw: raw["program_types"][0]["available_helpers"].append("@nope"))
        with pytest.raises(CatalogError, match="unresolved"):
            Catalog.from_file(path)

    def test_cyclic_group(self, tmp_path: Path) -> None:
        def mutate(raw: dict) -> None:
            raw["helper_groups"]["base"].append("@tracing")

        with pytest.raises(CatalogError, match="cyclic"):
            Catalog.from_file(_write(tmp_path, mutate))

    def test_schema_error_is_catalog_error(self, tmp_path: Path) -> None:
        path = _write(tmp_path, lambda raw: raw["helpers"][0].update(args=["NOT_AN_ARG"]))
        with pytest.raises(CatalogError):
            Catalog.from_file(path)

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(CatalogError):
            Catalog.from_file(tmp_path / "absent.json")


class TestQueries:
    def test_lookup_proto(self, catalog: Catalog) -> None:
        helper = catalog.helper(1)
        assert helper.name == "map_lookup_elem"
        assert helper.args == [ArgType.CONST_MAP_PTR, ArgType.PTR_TO_MAP_KEY]
        assert helper.ret_nullable
        assert helper.map_arg_index == 0

    def test_reserve_acquires_reference(self, catalog: Catalog) -> None:
        reserve = catalog.helper_by_name("ringbuf_reserve")
        submit = catalog.helper_by_name("ringbuf_submit")
        assert reserve.acquires_ref == submit.releases_ref

    def test_unknown_helper(self, catalog: Catalog) -> None:
        with pytest.raises(CatalogError):
            catalog.helper(9999)

    def test_maps_for_intersects_program_maps(self, catalog: Catalog) -> None:
        maps = catalog.maps_for(ProgramTypeId.XDP, catalog.helper_by_name("map_lookup_elem").id)
        assert MapTypeId.HASH in maps
        assert MapTypeId.STACK_TRACE not in maps

    def test_helper_without_map_argument(self, catalog: Catalog) -> None:
        with pytest.raises(CatalogError):
            catalog.maps_for(ProgramTypeId.KPROBE, catalog.helper_by_name("ktime_get_ns").id)

    def test_arg_compat(self, catalog: Catalog) -> None:
        assert VerifierValueType.PTR_TO_STACK in catalog.compatible_value_types(ArgType.PTR_TO_MAP_KEY)
        assert VerifierValueType.PTR_TO_CTX in catalog.compatible_value_types(ArgType.PTR_TO_CTX)

    def test_program_attributes(self, catalog: Catalog) -> None:
        xdp = catalog.program(ProgramTypeId.XDP)
        assert xdp.test_runnable
        assert xdp.attach_kind is AttachKind.DEVICE
        kprobe = catalog.program(ProgramTypeId.KPROBE)
        assert kprobe.attach_kind is AttachKind.TRACE_EVENT
        assert not kprobe.attach_kind.needs_target
        assert kprobe.interrupt_capable


class TestMapConstraints:
    @pytest.mark.parametrize(
        ("spec", "expected"),
        [
            (MapSpecRequest(map_type=MapTypeId.ARRAY, key_size=4, value_size=8, max_entries=4), None),
            (MapSpecRequest(map_type=MapTypeId.ARRAY, key_size=8, value_size=8, max_entries=4), "key_size"),
            (MapSpecRequest(map_type=MapTypeId.RINGBUF, key_size=0, value_size=0, max_entries=4096), None),
            (MapSpecRequest(map_type=MapTypeId.RINGBUF, key_size=0, value_size=0, max_entries=5000), "max_entries"),
            (MapSpecRequest(map_type=MapTypeId.QUEUE, key_size=4, value_size=8, max_entries=4), "key_size"),
            (MapSpecRequest(map_type=MapTypeId.CGROUP_STORAGE, key_size=12, value_size=8, max_entries=0), None),
            (MapSpecRequest(map_type=MapTypeId.PROG_ARRAY, key_size=4, value_size=8, max_entries=4), "value_size"),
            (MapSpecRequest(map_type=MapTypeId.HASH, key_size=4, value_size=8, max_entries=4, flags=0x400), "flags"),
        ],
    )
    def test_check_map_spec(self, catalog: Catalog, spec: MapSpecRequest, expected: str | None) -> None:
        assert catalog.check_map_spec(spec) == expected

    def test_map_type_accepts_name(self) -> None:
        spec = MapSpecRequest(map_type="HASH", key_size=4, value_size=4, max_entries=1)
        assert spec.map_type is MapTypeId.HASH

    def test_program_map_compatibility(self, catalog: Catalog) -> None:
        storage = MapSpecRequest(map_type=MapTypeId.CGROUP_STORAGE, key_size=8, value_size=8, max_entries=0)
        assert catalog.map_prog_compatible(ProgramTypeId.CGROUP_SOCK, storage)
        assert not catalog.map_prog_compatible(ProgramTypeId.XDP, storage)

    def test_sampled_sizes_satisfy_constraints(self, catalog: Catalog, rng) -> None:
        for spec in catalog.map_types:
            for _ in range(20):
                assert spec.key_size.allows(spec.key_size.sample(rng))
                assert spec.max_entries.allows(spec.max_entries.sample(rng, cap=8))
