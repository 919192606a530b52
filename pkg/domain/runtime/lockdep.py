import logging
from contextlib import contextmanager
from enum import StrEnum

from .types import BugReport, Oracle

logger = logging.getLogger(__name__)

RUNQUEUE_LOCK = "rq_lock"
USERCOPY_LOCK = "usercopy_lock"


class AcquireContext(StrEnum):
    TASK_IRQ_ON = "task_irq_on"
    IRQ_OFF = "irq_off"
    INTERRUPT = "interrupt"


class LockContextTracker:
    """lockdep 风格的观测记录：锁类在哪些上下文被获取，以及“持有 → 获取”的顺序边。"""

    def __init__(self) -> None:
        self.contexts: dict[str, set[AcquireContext]] = {}
        self.edges: set[tuple[str, str]] = set()
        self.held: list[str] = []
        self.reported: set[tuple[str, str]] = set()

    def acquire(self, lock_class: str, ctx: AcquireContext) -> None:
        self.contexts.setdefault(lock_class, set()).add(AcquireContext(ctx))
        for holder in self.held:
            if holder != lock_class:
                self.edges.add((holder, lock_class))
        self.held.append(lock_class)

    def release(self, lock_class: str) -> None:
        for i in range(len(self.held) - 1, -1, -1):
            if self.held[i] == lock_class:
                del self.held[i]
                return

    @contextmanager
    def hold(self, lock_class: str, ctx: AcquireContext):
        self.acquire(lock_class, ctx)
        try:
            yield
        finally:
            self.release(lock_class)

    def irq_unsafe(self) -> set[str]:
        return {c for c, ctxs in self.contexts.items() if AcquireContext.TASK_IRQ_ON in ctxs}

    def irq_used(self) -> set[str]:
        return {c for c, ctxs in self.contexts.items() if AcquireContext.INTERRUPT in ctxs}

    def _graph(self) -> dict[str, set[str]]:
        graph: dict[str, set[str]] = {}
        for a, b in self.edges:
            graph.setdefault(a, set()).add(b)
        # 中断里用到的锁，可能在任何开中断持有的锁之下被获取
        for unsafe in self.irq_unsafe():
            for used in self.irq_used():
                if unsafe != used:
                    graph.setdefault(unsafe, set()).add(used)
        return graph

    def cycles(self) -> list[list[str]]:
        graph = self._graph()
        nodes = sorted(set(graph) | {b for targets in graph.values() for b in targets})
        index: dict[str, int] = {}
        low: dict[str, int] = {}
        stack: list[str] = []
        on_stack: set[str] = set()
        out: list[list[str]] = []
        counter = 0

        def strongconnect(node: str) -> None:
            nonlocal counter
            index[node] = low[node] = counter
            counter += 1
            stack.append(node)
            on_stack.add(node)
            for succ in sorted(graph.get(node, ())):
                if succ not in index:
                    strongconnect(succ)
                    low[node] = min(low[node], low[succ])
                elif succ in on_stack:
                    low[node] = min(low[node], index[succ])
            if low[node] == index[node]:
                component = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    component.append(member)
                    if member == node:
                        break
                if len(component) > 1:
                    out.append(sorted(component))

        for node in nodes:
            if node not in index:
                strongconnect(node)
        return out

    def violations(self) -> list[BugReport]:
        reports = []
        for lock_class in sorted(self.irq_unsafe() & self.irq_used()):
            reports.append(
                BugReport(
                    oracle=Oracle.LOCK_CONTEXT_VIOLATION,
                    location=f"lock:{lock_class}",
                    detail=f"{lock_class} acquired with interrupts enabled and in interrupt context",
                )
            )
        for component in self.cycles():
            reports.append(
                BugReport(
                    oracle=Oracle.LOCK_CONTEXT_VIOLATION,
                    location=f"lock_cycle:{'->'.join(component)}",
                    detail=f"possible circular locking dependency between {', '.join(component)}",
                )
            )
        return reports


def lockdep_check(tracker: LockContextTracker) -> list[BugReport]:
    """返回尚未报告过的锁上下文违例；同一 (oracle, location) 只报告一次。"""
    fresh = []
    for report in tracker.violations():
        if report.key not in tracker.reported:
            tracker.reported.add(report.key)
            logger.debug("lockdep: %s", report.detail)
            fresh.append(report)
    return fresh
