"""运行时 map 实例。程序侧操作以字节传入键值，返回地址或 errno；用户侧操作不计覆盖。"""

import hashlib
from collections import OrderedDict, deque
from typing import TYPE_CHECKING

from domain.catalog import LockContext, MapSpecRequest, MapTypeId

from .memory import AddressSpace, Region
from .types import E2BIG, EEXIST, EINVAL, ENOENT, ENOSPC, NR_CPUS, neg

if TYPE_CHECKING:
    from .execution import Execution

BPF_ANY = 0
BPF_NOEXIST = 1
BPF_EXIST = 2

LOCK_CLASSES = {
    LockContext.BUCKET: "bucket_lock",
    LockContext.QUEUE: "queue_lock",
}

RINGBUF_HEADER = 8
MAP_OBJECT_SIZE = 64


def _round8(n: int) -> int:
    return (n + 7) & ~7


class MapInstance:
    lock_context: LockContext = LockContext.NONE
    irq_saving = True

    def __init__(self, map_id: int, spec: MapSpecRequest, memory: AddressSpace):
        self.id = map_id
        self.spec = spec
        self.memory = memory
        # 程序拿到的 map 指针指向这个对象
        self.object = memory.map(f"map{map_id}", "map_object", MAP_OBJECT_SIZE, writable=False)

    @property
    def lock_class(self) -> str | None:
        return LOCK_CLASSES.get(self.lock_context)

    def probe(self, ex: "Execution | None", op: str, branch: str) -> None:
        if ex is not None:
            ex.hit(f"map:{self.spec.map_type.name}:{op}:{branch}")

    def _key_index(self, key: bytes) -> int:
        return int.from_bytes(key[:4].ljust(4, b"\0"), "little")

    def _fit(self, value: bytes) -> bytes:
        return bytes(value[: self.spec.value_size]).ljust(self.spec.value_size, b"\0")

    # 默认：该类型不支持此操作
    def lookup(self, ex, key: bytes) -> int:
        return 0

    def update(self, ex, key: bytes, value: bytes, flags: int) -> int:
        return neg(EINVAL)

    def delete(self, ex, key: bytes) -> int:
        return neg(EINVAL)

    def push(self, ex, value: bytes, flags: int) -> int:
        return neg(EINVAL)

    def pop(self, ex, peek: bool = False) -> bytes | int:
        return neg(EINVAL)

    def user_lookup(self, key: bytes) -> bytes | None:
        address = self.lookup(None, key)
        if not address:
            return None
        region = self.memory.region_at(address)
        return bytes(region.data) if region is not None else None

    def state(self) -> object:
        return None

    def digest(self) -> str:
        return hashlib.sha1(repr((self.spec.map_type.name, self.state())).encode()).hexdigest()

    def release(self) -> None:
        self.memory.unmap(self.object)


class ArrayMap(MapInstance):
    def __init__(self, map_id, spec, memory):
        super().__init__(map_id, spec, memory)
        self.elements = [memory.map(f"map{map_id}[{i}]", "map_value", spec.value_size) for i in range(spec.max_entries)]

    def _slots(self, ex) -> list[Region]:
        return self.elements

    def lookup(self, ex, key):
        index = self._key_index(key)
        slots = self._slots(ex)
        if index >= len(slots):
            self.probe(ex, "lookup", "miss")
            return 0
        self.probe(ex, "lookup", "hit")
        return slots[index].base

    def update(self, ex, key, value, flags):
        if flags > BPF_EXIST:
            self.probe(ex, "update", "inval")
            return neg(EINVAL)
        index = self._key_index(key)
        slots = self._slots(ex)
        if index >= len(slots):
            self.probe(ex, "update", "oob")
            return neg(E2BIG)
        if flags == BPF_NOEXIST:
            self.probe(ex, "update", "exists")
            return neg(EEXIST)
        slots[index].data[:] = self._fit(value)
        self.probe(ex, "update", "replace")
        return 0

    def state(self):
        return [bytes(r.data) for r in self.elements]


class PercpuArrayMap(ArrayMap):
    def __init__(self, map_id, spec, memory):
        MapInstance.__init__(self, map_id, spec, memory)
        self.per_cpu = [
            [memory.map(f"map{map_id}[{i}]@cpu{cpu}", "map_value", spec.value_size) for i in range(spec.max_entries)]
            for cpu in range(NR_CPUS)
        ]
        self.elements = self.per_cpu[0]

    def _slots(self, ex):
        return self.per_cpu[ex.cpu if ex is not None else 0]

    def state(self):
        return [[bytes(r.data) for r in cpu] for cpu in self.per_cpu]


class HashMap(MapInstance):
    lock_context = LockContext.BUCKET
    evicts = False

    def __init__(self, map_id, spec, memory):
        super().__init__(map_id, spec, memory)
        self.entries: OrderedDict[bytes, Region] = OrderedDict()
        # 删除或淘汰的值延迟释放：程序仍可能持有查找得到的指针，直到 map 释放才解除映射
        self.retired: list[Region] = []

    def _norm(self, key: bytes) -> bytes:
        return bytes(key[: self.spec.key_size]).ljust(self.spec.key_size, b"\0")

    def lookup(self, ex, key):
        key = self._norm(key)
        region = self.entries.get(key)
        if region is None:
            self.probe(ex, "lookup", "miss")
            return 0
        if self.evicts:
            self.entries.move_to_end(key)
        self.probe(ex, "lookup", "hit")
        return region.base

    def update(self, ex, key, value, flags):
        if flags > BPF_EXIST:
            self.probe(ex, "update", "inval")
            return neg(EINVAL)
        key = self._norm(key)
        region = self.entries.get(key)
        if region is not None:
            if flags == BPF_NOEXIST:
                self.probe(ex, "update", "exists")
                return neg(EEXIST)
            region.data[:] = self._fit(value)
            if self.evicts:
                self.entries.move_to_end(key)
            self.probe(ex, "update", "replace")
            return 0
        if flags == BPF_EXIST:
            self.probe(ex, "update", "noent")
            return neg(ENOENT)
        if len(self.entries) >= self.spec.max_entries:
            if not self.evicts:
                self.probe(ex, "update", "full")
                return neg(E2BIG)
            _, oldest = self.entries.popitem(last=False)
            self.retired.append(oldest)
            self.probe(ex, "update", "evict")
        self.entries[key] = self.memory.map(f"map{self.id}{{{key.hex()}}}", "map_value", self.spec.value_size, data=self._fit(value))
        self.probe(ex, "update", "new")
        return 0

    def delete(self, ex, key):
        region = self.entries.pop(self._norm(key), None)
        if region is None:
            self.probe(ex, "delete", "miss")
            return neg(ENOENT)
        self.retired.append(region)
        self.probe(ex, "delete", "hit")
        return 0

    def state(self):
        return sorted((k, bytes(r.data)) for k, r in self.entries.items())

    def release(self):
        for region in self.retired:
            self.memory.unmap(region)
        self.retired.clear()
        super().release()


class LruHashMap(HashMap):
    evicts = True

    def state(self):
        return [(k, bytes(r.data)) for k, r in self.entries.items()]


class QueueMap(MapInstance):
    """FIFO；STACK 子类改为后进先出。"""

    lock_context = LockContext.QUEUE
    lifo = False

    def __init__(self, map_id, spec, memory, *, irq_saving: bool = True):
        super().__init__(map_id, spec, memory)
        self.items: deque[bytes] = deque()
        self.irq_saving = irq_saving

    def push(self, ex, value, flags):
        if flags not in (BPF_ANY, BPF_EXIST):
            self.probe(ex, "push", "inval")
            return neg(EINVAL)
        if len(self.items) >= self.spec.max_entries:
            if flags != BPF_EXIST:
                self.probe(ex, "push", "full")
                return neg(E2BIG)
            # BPF_EXIST：满时挤掉最旧的元素
            self.items.popleft()
            self.probe(ex, "push", "evict")
        self.items.append(self._fit(value))
        self.probe(ex, "push", "ok")
        return 0

    def pop(self, ex, peek=False):
        op = "peek" if peek else "pop"
        if not self.items:
            self.probe(ex, op, "empty")
            return neg(ENOENT)
        self.probe(ex, op, "ok")
        if self.lifo:
            return self.items[-1] if peek else self.items.pop()
        return self.items[0] if peek else self.items.popleft()

    def state(self):
        return list(self.items)


class StackMap(QueueMap):
    lifo = True


class RingRecord:
    __slots__ = ("region", "length", "state", "payload")

    def __init__(self, region: Region, length: int):
        self.region = region
        self.length = length
        self.state = "busy"
        self.payload: bytes | None = None


class RingBufMap(MapInstance):
    def __init__(self, map_id, spec, memory):
        super().__init__(map_id, spec, memory)
        self.size = spec.max_entries
        self.records: deque[RingRecord] = deque()
        self.outstanding: dict[int, RingRecord] = {}
        self.producer = 0
        self.consumer = 0

    def _room(self, length: int) -> bool:
        return self.producer - self.consumer + length <= self.size

    def reserve(self, ex, size: int) -> int:
        need = _round8(size) + RINGBUF_HEADER
        if size == 0 or not self._room(need):
            self.probe(ex, "reserve", "full")
            return 0
        region = self.memory.map(f"ringbuf{self.id}@{self.producer}", "ringbuf_record", size)
        record = RingRecord(region, need)
        self.records.append(record)
        self.outstanding[region.base] = record
        self.producer += need
        self.probe(ex, "reserve", "ok")
        return region.base

    def commit(self, ex, address: int, discard: bool) -> bool:
        op = "discard" if discard else "submit"
        record = self.outstanding.pop(address, None)
        if record is None:
            self.probe(ex, op, "miss")
            return False
        record.state = "discarded" if discard else "committed"
        record.payload = None if discard else bytes(record.region.data)
        self.memory.unmap(record.region)
        self.probe(ex, op, "ok")
        return True

    def output(self, ex, data: bytes) -> int:
        need = _round8(len(data)) + RINGBUF_HEADER
        if not self._room(need):
            self.probe(ex, "output", "full")
            return neg(ENOSPC)
        region = Region(f"ringbuf{self.id}@{self.producer}", "ringbuf_record", 0, bytearray(data))
        record = RingRecord(region, need)
        record.state = "committed"
        record.payload = bytes(data)
        self.records.append(record)
        self.producer += need
        self.probe(ex, "output", "ok")
        return 0

    def query(self, ex, flags: int) -> int:
        self.probe(ex, "query", "ok")
        if flags == 0:
            return self.producer - self.consumer
        if flags == 1:
            return self.size
        if flags == 2:
            return self.consumer
        if flags == 3:
            return self.producer
        return 0

    def consume(self) -> list[bytes]:
        """用户侧消费：按提交顺序取出已提交的记录，遇到仍在保留中的记录即停。"""
        out = []
        while self.records and self.records[0].state != "busy":
            record = self.records.popleft()
            self.consumer += record.length
            if record.state == "committed":
                out.append(record.payload)
        return out

    def state(self):
        return self.producer, self.consumer, [(r.state, r.payload) for r in self.records]


class ProgArrayMap(MapInstance):
    """槽位按 u64 程序 id 存放；0 表示空。"""

    def __init__(self, map_id, spec, memory):
        super().__init__(map_id, spec, memory)
        self.slots = memory.map(f"map{map_id}.progs", "prog_array", 8 * spec.max_entries, writable=False)

    def slot_address(self, index: int) -> int:
        return self.slots.base + 8 * index

    def set_prog(self, index: int, prog_id: int) -> None:
        self.slots.data[8 * index : 8 * index + 8] = prog_id.to_bytes(8, "little")

    def get_prog(self, index: int) -> int:
        return int.from_bytes(self.slots.data[8 * index : 8 * index + 8], "little")

    def delete(self, ex, key):
        index = self._key_index(key)
        if index >= self.spec.max_entries or not self.get_prog(index):
            return neg(ENOENT)
        self.set_prog(index, 0)
        return 0

    def state(self):
        return bytes(self.slots.data)


class PerfEventArrayMap(MapInstance):
    def __init__(self, map_id, spec, memory):
        super().__init__(map_id, spec, memory)
        self.enabled = [False] * spec.max_entries
        self.events: list[tuple[int, bytes]] = []

    def output(self, ex, index: int, data: bytes) -> int:
        if index >= len(self.enabled):
            self.probe(ex, "perf_output", "oob")
            return neg(E2BIG)
        if not self.enabled[index]:
            self.probe(ex, "perf_output", "noent")
            return neg(ENOENT)
        self.events.append((index, bytes(data)))
        self.probe(ex, "perf_output", "ok")
        return 0

    def state(self):
        return list(self.enabled), list(self.events)


class StackTraceMap(MapInstance):
    def __init__(self, map_id, spec, memory):
        super().__init__(map_id, spec, memory)
        self.traces: dict[int, bytes] = {}

    def get_stackid(self, ex, seed: bytes, flags: int) -> int:
        digest = hashlib.sha1(seed).digest()
        stack_id = int.from_bytes(digest[:4], "little") % self.spec.max_entries
        frames = (digest * (self.spec.value_size // len(digest) + 1))[: self.spec.value_size]
        existing = self.traces.get(stack_id)
        if existing is not None and existing != frames:
            # BPF_F_REUSE_STACKID = 1 << 10
            if not flags & (1 << 10):
                self.probe(ex, "stackid", "exists")
                return neg(EEXIST)
            self.probe(ex, "stackid", "replace")
        else:
            self.probe(ex, "stackid", "new" if existing is None else "hit")
        self.traces[stack_id] = frames
        return stack_id

    def user_lookup(self, key):
        return self.traces.get(self._key_index(key))

    def state(self):
        return sorted(self.traces.items())


class CgroupStorageMap(MapInstance):
    def __init__(self, map_id, spec, memory):
        super().__init__(map_id, spec, memory)
        self.storage = memory.map(f"map{map_id}.storage", "map_value", spec.value_size)

    def local_storage(self, ex) -> int:
        self.probe(ex, "storage", "ok")
        return self.storage.base

    def user_lookup(self, key):
        return bytes(self.storage.data)

    def update(self, ex, key, value, flags):
        self.storage.data[:] = self._fit(value)
        return 0

    def state(self):
        return bytes(self.storage.data)


MAP_CLASSES: dict[MapTypeId, type[MapInstance]] = {
    MapTypeId.HASH: HashMap,
    MapTypeId.ARRAY: ArrayMap,
    MapTypeId.PROG_ARRAY: ProgArrayMap,
    MapTypeId.PERF_EVENT_ARRAY: PerfEventArrayMap,
    MapTypeId.PERCPU_ARRAY: PercpuArrayMap,
    MapTypeId.STACK_TRACE: StackTraceMap,
    MapTypeId.LRU_HASH: LruHashMap,
    MapTypeId.CGROUP_STORAGE: CgroupStorageMap,
    MapTypeId.QUEUE: QueueMap,
    MapTypeId.STACK: StackMap,
    MapTypeId.RINGBUF: RingBufMap,
}


def create_map(map_id: int, spec: MapSpecRequest, memory: AddressSpace, *, irq_unsafe_queue: bool = False) -> MapInstance:
    cls = MAP_CLASSES[spec.map_type]
    if issubclass(cls, QueueMap):
        return cls(map_id, spec, memory, irq_saving=not irq_unsafe_queue)
    return cls(map_id, spec, memory)
