import zlib
from dataclasses import dataclass
from typing import TYPE_CHECKING

from domain.catalog import ProgramTypeId

from .memory import Region

if TYPE_CHECKING:
    from .kernel import SimKernel

ETH_P_IP = 0x0800


@dataclass(slots=True)
class ContextFrame:
    region: Region
    packet: bytes = b""

    @property
    def address(self) -> int:
        return self.region.base


def _fill(region: Region, fields: dict, values: dict[str, int]) -> None:
    for name, value in values.items():
        f = fields.get(name)
        if f is None:
            continue
        region.data[f.offset : f.offset + f.width] = (value & ((1 << (8 * f.width)) - 1)).to_bytes(f.width, "little")


def build_context(kernel: "SimKernel", prog_type: ProgramTypeId, payload: bytes) -> ContextFrame:
    """按程序类型构造上下文区域。包类程序的负载放在包缓冲里，其余类型直接拼进上下文。"""
    desc = kernel.catalog.program(prog_type).context
    fields = {f.name: f for f in desc.fields}
    prog_type = ProgramTypeId(prog_type)
    if prog_type is ProgramTypeId.SOCKET_FILTER:
        region = kernel.memory.map("ctx", "ctx", desc.size)
        _fill(
            region,
            fields,
            {
                "len": len(payload),
                "protocol": ETH_P_IP,
                "ifindex": 1,
                "hash": zlib.crc32(payload),
                "sk": kernel.socket.base,
            },
        )
        return ContextFrame(region, bytes(payload))
    if prog_type is ProgramTypeId.XDP:
        region = kernel.memory.map("ctx", "ctx", desc.size)
        _fill(region, fields, {"ingress_ifindex": 1, "pkt_len": len(payload)})
        return ContextFrame(region, bytes(payload))
    region = kernel.memory.map("ctx", "ctx", desc.size, data=bytes(payload[: desc.size]))
    return ContextFrame(region)
