import copy
import logging
from collections.abc import Callable, Iterator

from domain.astgen import GuardedBlock, Stmt, prune_unused, renumber_maps
from domain.catalog import Catalog, CatalogService
from domain.runtime import Engine, Oracle, SeededBug, SimKernel

from .executor import execute_input
from .inputs import prologue_for
from .types import AuxCall, FuzzInput

logger = logging.getLogger(__name__)

Predicate = Callable[[FuzzInput], bool]


def reproduces(
    oracle: Oracle,
    location: str | None = None,
    *,
    kernel_seed: int = 0,
    seeded_bugs: frozenset[SeededBug] = frozenset(),
    engine: Engine = Engine.BOTH,
    catalog: Catalog | None = None,
) -> Predicate:
    """在新内核上重放，检查是否仍然报出同一个 oracle（可限定位置）。"""
    catalog = catalog or CatalogService.get()

    def check(inp: FuzzInput) -> bool:
        kernel = SimKernel(catalog=catalog, seed=kernel_seed, seeded_bugs=seeded_bugs, engine=engine)
        outcome = execute_input(inp, kernel)
        return any(b.oracle is oracle and (location is None or b.location == location) for b in outcome.bugs)

    return check


def _stmt_paths(stmts: list[Stmt], prefix: tuple[int, ...] = ()) -> list[tuple[int, ...]]:
    paths = []
    for i, stmt in enumerate(stmts):
        paths.append(prefix + (i,))
        if isinstance(stmt, GuardedBlock):
            paths += _stmt_paths(stmt.body, prefix + (i,))
    return paths


def _drop_stmt(inp: FuzzInput, path: tuple[int, ...], catalog: Catalog) -> FuzzInput:
    ast = copy.deepcopy(inp.ast)
    stmts = ast.stmts
    for index in path[:-1]:
        stmts = stmts[index].body
    del stmts[path[-1]]
    prune_unused(ast)
    mapping = renumber_maps(ast)
    aux = [
        AuxCall(c.kind, mapping[c.map_ordinal], c.slot, c.key, c.value, c.flags, c.index)
        for c in inp.aux_calls
        if c.map_ordinal in mapping
    ]
    return FuzzInput(ast, prologue_for(ast, catalog), list(inp.triggers), aux)


def _drop_trigger(inp: FuzzInput, pos: int) -> FuzzInput:
    triggers = inp.triggers[:pos] + inp.triggers[pos + 1 :]
    aux = [
        AuxCall(c.kind, c.map_ordinal, c.slot - 1 if c.slot > pos else c.slot, c.key, c.value, c.flags, c.index)
        for c in inp.aux_calls
    ]
    return FuzzInput(inp.ast, list(inp.prologue), triggers, aux)


def _candidates(inp: FuzzInput, catalog: Catalog) -> Iterator[FuzzInput]:
    for pos in reversed(range(len(inp.aux_calls))):
        yield FuzzInput(inp.ast, list(inp.prologue), list(inp.triggers), inp.aux_calls[:pos] + inp.aux_calls[pos + 1 :])
    for pos in reversed(range(len(inp.triggers))):
        yield _drop_trigger(inp, pos)
    for path in reversed(_stmt_paths(inp.ast.stmts)):
        yield _drop_stmt(inp, path, catalog)


def minimize_input(inp: FuzzInput, predicate: Predicate, *, catalog: Catalog | None = None) -> FuzzInput:
    """贪心删除辅助调用、触发和语句，直到删掉任何一个都会让谓词失败。"""
    catalog = catalog or CatalogService.get()
    if not predicate(inp):
        return inp
    best = inp
    while True:
        for candidate in _candidates(best, catalog):
            if candidate.size < best.size and predicate(candidate):
                logger.debug("minimize: %d -> %d", best.size, candidate.size)
                best = candidate
                break
        else:
            return best
