"""模拟地址空间：每个区域有独立基址，区域之间隔着未映射的空隙，第一页是空页。"""

import bisect
from dataclasses import dataclass, field

from .types import MemoryFault

PAGE = 0x1000
NULL_LIMIT = PAGE
BASE = 0x10_0000
GAP = PAGE


@dataclass(slots=True)
class Region:
    name: str
    kind: str
    base: int
    data: bytearray
    writable: bool = True

    @property
    def size(self) -> int:
        return len(self.data)

    @property
    def end(self) -> int:
        return self.base + len(self.data)


@dataclass
class AddressSpace:
    regions: list[Region] = field(default_factory=list)
    bases: list[int] = field(default_factory=list)
    next_base: int = BASE

    def map(self, name: str, kind: str, size: int, *, data: bytes | None = None, writable: bool = True) -> Region:
        """分配新区域；地址单调增长，不会复用。"""
        buf = bytearray(size) if data is None else bytearray(data.ljust(size, b"\0")[:size])
        region = Region(name, kind, self.next_base, buf, writable)
        self.regions.append(region)
        self.bases.append(region.base)
        # 至少占一页，保证相邻区域之间有空隙
        span = max(PAGE, -(-max(size, 1) // PAGE) * PAGE)
        self.next_base += span + GAP
        return region

    def unmap(self, region: Region) -> None:
        index = self._index(region.base)
        if index is not None and self.regions[index] is region:
            del self.regions[index]
            del self.bases[index]

    def _index(self, address: int) -> int | None:
        i = bisect.bisect_right(self.bases, address) - 1
        return i if i >= 0 else None

    def resolve(self, address: int, width: int, write: bool = False) -> tuple[Region, int]:
        if address < NULL_LIMIT:
            raise MemoryFault("null", address, width)
        index = self._index(address)
        if index is None:
            raise MemoryFault("unmapped", address, width)
        region = self.regions[index]
        offset = address - region.base
        if offset + width > region.size or width < 0:
            raise MemoryFault("oob", address, width, f"past {region.name} ({region.size} bytes)")
        if write and not region.writable:
            raise MemoryFault("oob", address, width, f"{region.name} is read-only")
        return region, offset

    def region_at(self, address: int) -> Region | None:
        index = self._index(address)
        if index is None:
            return None
        region = self.regions[index]
        return region if region.base <= address < region.end else None

    def read(self, address: int, size: int) -> bytes:
        if size == 0:
            return b""
        region, offset = self.resolve(address, size)
        return bytes(region.data[offset : offset + size])

    def write(self, address: int, payload: bytes) -> None:
        if not payload:
            return
        region, offset = self.resolve(address, len(payload), write=True)
        region.data[offset : offset + len(payload)] = payload

    def load(self, address: int, width: int) -> int:
        return int.from_bytes(self.read(address, width), "little")

    def store(self, address: int, width: int, value: int) -> None:
        self.write(address, (value & ((1 << (8 * width)) - 1)).to_bytes(width, "little"))
