"""辅助函数的运行时实现。按目录里的名字分发，参数是 r1..r5 的原始值。"""

import logging
from collections.abc import Callable

from domain.catalog import LockContext

from .execution import Execution, TailCall, args_digest
from .lockdep import USERCOPY_LOCK
from .maps import (
    CgroupStorageMap,
    LruHashMap,
    MapInstance,
    PerfEventArrayMap,
    ProgArrayMap,
    QueueMap,
    RingBufMap,
    StackTraceMap,
)
from .types import (
    EBUSY,
    EFAULT,
    EINVAL,
    ENOENT,
    TAIL_CALL_LIMIT,
    HelperCall,
    MemoryFault,
    SeededBug,
    neg,
)

logger = logging.getLogger(__name__)

HelperImpl = Callable[[Execution, list[int]], "int | TailCall"]
HELPER_IMPLS: dict[str, HelperImpl] = {}

U32 = 0xFFFFFFFF


def helper(name: str):
    def register(func: HelperImpl) -> HelperImpl:
        HELPER_IMPLS[name] = func
        return func

    return register


class HelperAbort(Exception):
    """辅助函数内部检查失败，返回给程序的 errno。"""

    def __init__(self, errno: int):
        super().__init__(errno)
        self.errno = errno


def _map(ex: Execution, address: int, kind: type[MapInstance] | tuple[type[MapInstance], ...] = MapInstance) -> MapInstance:
    m = ex.map_at(address)
    if m is None or not isinstance(m, kind):
        raise HelperAbort(EINVAL)
    return m


def _locked(ex: Execution, m: MapInstance, helper_lock: LockContext):
    if helper_lock is LockContext.NONE or m.lock_context is not helper_lock:
        return None
    return ex.kernel.locks.hold(m.lock_class, ex.lock_context(m.irq_saving))


def _with_lock(ex: Execution, m: MapInstance, helper_lock: LockContext, func):
    guard = _locked(ex, m, helper_lock)
    if guard is None:
        return func()
    with guard:
        return func()


def dispatch(ex: Execution, helper_id: int, args: list[int]) -> "int | TailCall":
    proto = ex.kernel.catalog.helper(helper_id)
    ex.trace.append(HelperCall(helper_id=helper_id, args_digest=args_digest(args[: len(proto.args)])))
    ex.hit(f"helper:{proto.name}")
    impl = HELPER_IMPLS.get(proto.name)
    if impl is None:
        logger.warning("helper %s has no runtime implementation", proto.name)
        return neg(EINVAL)
    try:
        return impl(ex, args)
    except HelperAbort as abort:
        return neg(abort.errno)
    except MemoryFault as fault:
        ex.fault(fault, f"helper:{proto.name}")
        return neg(EFAULT)


@helper("map_lookup_elem")
def map_lookup_elem(ex: Execution, args: list[int]) -> int:
    m = _map(ex, args[0])
    key = ex.memory.read(args[1], m.spec.key_size)
    address = m.lookup(ex, key)
    if not address and isinstance(m, LruHashMap) and SeededBug.LOOKUP_NULL_PASSTHROUGH in ex.kernel.seeded_bugs:
        # 未命中时沿用空的元素指针去读值头
        try:
            ex.memory.load(address + 8, 8)
        except MemoryFault as fault:
            ex.fault(fault, "helper:map_lookup_elem")
    return address


@helper("map_update_elem")
def map_update_elem(ex: Execution, args: list[int]) -> int:
    m = _map(ex, args[0])
    key = ex.memory.read(args[1], m.spec.key_size)
    value = ex.memory.read(args[2], m.spec.value_size)
    return _with_lock(ex, m, LockContext.BUCKET, lambda: m.update(ex, key, value, args[3]))


@helper("map_delete_elem")
def map_delete_elem(ex: Execution, args: list[int]) -> int:
    m = _map(ex, args[0])
    key = ex.memory.read(args[1], m.spec.key_size)
    return _with_lock(ex, m, LockContext.BUCKET, lambda: m.delete(ex, key))


@helper("ktime_get_ns")
def ktime_get_ns(ex: Execution, args: list[int]) -> int:
    ex.kernel.clock += 1000
    return ex.kernel.clock


@helper("get_prandom_u32")
def get_prandom_u32(ex: Execution, args: list[int]) -> int:
    return ex.kernel.rng.getrandbits(32)


@helper("get_smp_processor_id")
def get_smp_processor_id(ex: Execution, args: list[int]) -> int:
    return ex.cpu


@helper("get_current_pid_tgid")
def get_current_pid_tgid(ex: Execution, args: list[int]) -> int:
    return ex.kernel.pid_tgid


@helper("tail_call")
def tail_call(ex: Execution, args: list[int]) -> "int | TailCall":
    m = _map(ex, args[1], ProgArrayMap)
    index = args[2] & U32
    if index >= m.spec.max_entries and SeededBug.TAILCALL_OOB not in ex.kernel.seeded_bugs:
        m.probe(ex, "tail_call", "oob")
        return neg(ENOENT)
    if ex.tail_calls >= TAIL_CALL_LIMIT:
        ex.hit("exec:tail_limit")
        return neg(ENOENT)
    # 槽位读取走模拟内存；越界索引在这里触发故障
    prog_id = ex.memory.load(m.slot_address(index), 8)
    target = ex.kernel.programs.get(prog_id) if prog_id else None
    if target is None:
        m.probe(ex, "tail_call", "miss")
        return neg(ENOENT)
    if target.prog_type != ex.prog.prog_type:
        m.probe(ex, "tail_call", "inval")
        return neg(EINVAL)
    m.probe(ex, "tail_call", "hit")
    ex.tail_calls += 1
    ex.hit("exec:tail_call")
    return TailCall(target)


@helper("perf_event_output")
def perf_event_output(ex: Execution, args: list[int]) -> int:
    m = _map(ex, args[1], PerfEventArrayMap)
    flags = args[2]
    if flags >> 32:
        return neg(EINVAL)
    index = flags & U32
    if index == U32:
        index = ex.cpu
    data = ex.memory.read(args[3], args[4])
    return m.output(ex, index, data)


@helper("skb_load_bytes")
def skb_load_bytes(ex: Execution, args: list[int]) -> int:
    offset = args[1] & U32
    length = args[3] & U32
    packet = ex.frame.packet
    if offset + length > len(packet):
        ex.memory.write(args[2], bytes(length))
        return neg(EFAULT)
    ex.memory.write(args[2], packet[offset : offset + length])
    return 0


@helper("get_stackid")
def get_stackid(ex: Execution, args: list[int]) -> int:
    m = _map(ex, args[1], StackTraceMap)
    seed = ex.prog.id.to_bytes(4, "little") + bytes(ex.frame.region.data[:8])
    return m.get_stackid(ex, seed, args[2])


@helper("get_local_storage")
def get_local_storage(ex: Execution, args: list[int]) -> int:
    return _map(ex, args[0], CgroupStorageMap).local_storage(ex)


@helper("map_push_elem")
def map_push_elem(ex: Execution, args: list[int]) -> int:
    m = _map(ex, args[0], QueueMap)
    value = ex.memory.read(args[1], m.spec.value_size)
    return _with_lock(ex, m, LockContext.QUEUE, lambda: m.push(ex, value, args[2]))


def _pop(ex: Execution, args: list[int], peek: bool) -> int:
    m = _map(ex, args[0], QueueMap)
    # 先检查目的地址，空队列时也不写
    ex.memory.resolve(args[1], m.spec.value_size, write=True)
    value = _with_lock(ex, m, LockContext.QUEUE, lambda: m.pop(ex, peek))
    if isinstance(value, int):
        return value
    ex.memory.write(args[1], value)
    return 0


@helper("map_pop_elem")
def map_pop_elem(ex: Execution, args: list[int]) -> int:
    return _pop(ex, args, peek=False)


@helper("map_peek_elem")
def map_peek_elem(ex: Execution, args: list[int]) -> int:
    return _pop(ex, args, peek=True)


@helper("sk_fullsock")
def sk_fullsock(ex: Execution, args: list[int]) -> int:
    region = ex.memory.region_at(args[0])
    if region is None or region.kind != "socket":
        return 0
    return args[0]


def _copy_from(ex: Execution, args: list[int], arena_name: str) -> int:
    dst, size, src = args[0], args[1] & U32, args[2]
    ex.memory.resolve(dst, size, write=True)
    arena = getattr(ex.kernel, arena_name)
    if size and arena.base <= src and src + size <= arena.end:
        ex.memory.write(dst, bytes(arena.data[src - arena.base : src - arena.base + size]))
        return 0
    ex.memory.write(dst, bytes(size))
    return neg(EFAULT)


@helper("probe_read_kernel")
def probe_read_kernel(ex: Execution, args: list[int]) -> int:
    return _copy_from(ex, args, "kernel_arena")


@helper("probe_read_user")
def probe_read_user(ex: Execution, args: list[int]) -> int:
    buggy = SeededBug.USERCOPY_NMI in ex.kernel.seeded_bugs
    if ex.interrupt and not buggy:
        # 中断上下文里不能缺页，清零目的缓冲后拒绝
        ex.memory.write(args[0], bytes(args[1] & U32))
        return neg(EBUSY)
    ctx = ex.lock_context(irq_saving=not buggy)
    with ex.kernel.locks.hold(USERCOPY_LOCK, ctx):
        return _copy_from(ex, args, "user_arena")


@helper("ringbuf_output")
def ringbuf_output(ex: Execution, args: list[int]) -> int:
    m = _map(ex, args[0], RingBufMap)
    data = ex.memory.read(args[1], args[2] & U32)
    return m.output(ex, data)


@helper("ringbuf_reserve")
def ringbuf_reserve(ex: Execution, args: list[int]) -> int:
    m = _map(ex, args[0], RingBufMap)
    if args[2]:
        return 0
    address = m.reserve(ex, args[1] & U32)
    if address:
        ex.outstanding[address] = m
    return address


def _commit(ex: Execution, args: list[int], discard: bool) -> int:
    m = ex.outstanding.get(args[0])
    if m is None:
        return 0
    m.commit(ex, args[0], discard)
    if not (discard and SeededBug.RINGBUF_LEAK in ex.kernel.seeded_bugs):
        del ex.outstanding[args[0]]
    return 0


@helper("ringbuf_submit")
def ringbuf_submit(ex: Execution, args: list[int]) -> int:
    return _commit(ex, args, discard=False)


@helper("ringbuf_discard")
def ringbuf_discard(ex: Execution, args: list[int]) -> int:
    return _commit(ex, args, discard=True)


@helper("ringbuf_query")
def ringbuf_query(ex: Execution, args: list[int]) -> int:
    return _map(ex, args[0], RingBufMap).query(ex, args[1])

