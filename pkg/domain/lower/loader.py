import struct
from collections.abc import Mapping

from pydantic import ValidationError

from domain.catalog import MapSpecRequest, MapTypeId
from domain.isa import BytecodeError, Instruction, RawProgram, RelocationRecord, decode_program, encode_program

from .types import LoadError

MAGIC = b"BRFP"
CONTAINER_VERSION = 1

_HEADER = struct.Struct("<4sHH")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_MAP = struct.Struct("<HIIII")
_RELOC = struct.Struct("<IH")


def relocate(prog: RawProgram, handles: Mapping[int, int]) -> RawProgram:
    """把 map 序号改写为运行时 map id，返回新的可执行镜像；输入不变。"""
    if prog.relocated:
        raise LoadError("already_relocated", "program image was already relocated")
    insns = list(prog.insns)
    for reloc in prog.relocations:
        if reloc.map_ordinal not in handles:
            raise LoadError("reloc_unresolved", f"no map handle for ordinal {reloc.map_ordinal}")
        insn = insns[reloc.insn_index]
        insns[reloc.insn_index] = Instruction.ld_map(insn.dst_reg, handles[reloc.map_ordinal])
    return RawProgram(prog.prog_type, prog.section_name, insns, [], relocated=True)


def encode_container(prog: RawProgram, map_deps: list[MapSpecRequest]) -> bytes:
    if prog.relocated:
        raise LoadError("bad_container", "relocated images cannot be stored")
    name = prog.section_name.encode("utf-8")
    code = encode_program(prog.insns)
    parts = [_HEADER.pack(MAGIC, CONTAINER_VERSION, prog.prog_type), _U16.pack(len(name)), name]
    parts.append(_U16.pack(len(map_deps)))
    for dep in map_deps:
        parts.append(_MAP.pack(int(dep.map_type), dep.key_size, dep.value_size, dep.max_entries, dep.flags))
    parts.append(_U16.pack(len(prog.relocations)))
    for reloc in prog.relocations:
        parts.append(_RELOC.pack(reloc.insn_index, reloc.map_ordinal))
    parts.append(_U32.pack(len(code)))
    parts.append(code)
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: struct.Struct) -> tuple:
        if self.pos + fmt.size > len(self.data):
            raise LoadError("bad_container", f"truncated container at byte {self.pos}")
        values = fmt.unpack_from(self.data, self.pos)
        self.pos += fmt.size
        return values

    def raw(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise LoadError("bad_container", f"truncated container at byte {self.pos}")
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        return chunk


def decode_container(data: bytes) -> tuple[RawProgram, list[MapSpecRequest]]:
    reader = _Reader(data)
    magic, version, prog_type = reader.take(_HEADER)
    if magic != MAGIC:
        raise LoadError("bad_container", f"bad magic {magic!r}")
    if version != CONTAINER_VERSION:
        raise LoadError("bad_container", f"unsupported container version {version}")
    (name_len,) = reader.take(_U16)
    try:
        name = reader.raw(name_len).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise LoadError("bad_container", f"section name is not UTF-8: {exc}") from None

    (map_count,) = reader.take(_U16)
    maps: list[MapSpecRequest] = []
    for _ in range(map_count):
        map_type, key, value, entries, flags = reader.take(_MAP)
        try:
            maps.append(
                MapSpecRequest(
                    map_type=MapTypeId(map_type), key_size=key, value_size=value, max_entries=entries, flags=flags
                )
            )
        except (ValueError, ValidationError) as exc:
            raise LoadError("bad_container", f"bad map record: {exc}") from None

    (reloc_count,) = reader.take(_U16)
    relocs = [RelocationRecord(*reader.take(_RELOC)) for _ in range(reloc_count)]
    for reloc in relocs:
        if reloc.map_ordinal >= len(maps):
            raise LoadError("bad_container", f"relocation references map {reloc.map_ordinal}")

    (code_len,) = reader.take(_U32)
    code = reader.raw(code_len)
    if reader.pos != len(data):
        raise LoadError("bad_container", f"{len(data) - reader.pos} trailing bytes")
    try:
        prog = RawProgram(prog_type, name, decode_program(code), relocs)
    except BytecodeError as exc:
        raise LoadError("bad_container", f"{exc.rule_id}: {exc.message}") from None
    return prog, maps
