import logging
from collections.abc import Iterable

import numpy as np

from domain.catalog import MapTypeId
from domain.isa import OPCODE_NAMES

logger = logging.getLogger(__name__)

HELPER_PROBE_NAMES = (
    "map_lookup_elem",
    "map_update_elem",
    "map_delete_elem",
    "ktime_get_ns",
    "get_prandom_u32",
    "get_smp_processor_id",
    "tail_call",
    "get_current_pid_tgid",
    "perf_event_output",
    "skb_load_bytes",
    "get_stackid",
    "get_local_storage",
    "map_push_elem",
    "map_pop_elem",
    "map_peek_elem",
    "sk_fullsock",
    "probe_read_user",
    "probe_read_kernel",
    "ringbuf_output",
    "ringbuf_reserve",
    "ringbuf_submit",
    "ringbuf_discard",
    "ringbuf_query",
)
MAP_OPS = ("lookup", "update", "delete", "push", "pop", "peek", "reserve", "submit", "discard", "output", "query", "stackid", "storage", "tail_call", "perf_output")
MAP_BRANCHES = ("hit", "miss", "new", "replace", "exists", "noent", "full", "evict", "empty", "ok", "oob", "busy", "inval")
EXTRA_PROBES = (
    "ctx:build",
    "exec:interrupt",
    "exec:tail_call",
    "exec:tail_limit",
    "exec:insn_cap",
    "exec:fault",
    "exec:unsupported",
    "exec:exit",
)


def _probe_names() -> list[str]:
    names = [f"op:{name}" for name in sorted(set(OPCODE_NAMES.values()))]
    names += [f"helper:{name}" for name in HELPER_PROBE_NAMES]
    names += [f"map:{mt.name}:{op}:{branch}" for mt in MapTypeId for op in MAP_OPS for branch in MAP_BRANCHES]
    names += list(EXTRA_PROBES)
    return names


PROBE_NAMES: tuple[str, ...] = tuple(_probe_names())
PROBE_IDS: dict[str, int] = {name: i for i, name in enumerate(PROBE_NAMES)}


def probe_id(name: str) -> int | None:
    return PROBE_IDS.get(name)


class CoverageMap:
    """静态探针上的计数数组；合并是逐项取最大值，幂等。"""

    def __init__(self, counts: np.ndarray | None = None):
        self.counts = counts if counts is not None else np.zeros(len(PROBE_NAMES), dtype=np.uint32)

    def hit(self, ids: Iterable[int]) -> None:
        idx = np.fromiter(ids, dtype=np.int64)
        if idx.size:
            np.add.at(self.counts, idx, 1)

    def new_probes(self, ids: Iterable[int]) -> list[int]:
        return [i for i in ids if self.counts[i] == 0]

    def merge(self, other: "CoverageMap | Iterable[int]") -> list[int]:
        """并入另一份覆盖，返回此前未覆盖的探针。"""
        if isinstance(other, CoverageMap):
            fresh = np.flatnonzero((self.counts == 0) & (other.counts > 0)).tolist()
            np.maximum(self.counts, other.counts, out=self.counts)
            return fresh
        ids = list(other)
        fresh = self.new_probes(ids)
        self.hit(ids)
        return fresh

    @property
    def covered(self) -> int:
        return int(np.count_nonzero(self.counts))

    def covered_names(self) -> list[str]:
        return [PROBE_NAMES[i] for i in np.flatnonzero(self.counts)]

    def copy(self) -> "CoverageMap":
        return CoverageMap(self.counts.copy())
