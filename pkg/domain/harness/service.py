import json
import logging
from collections.abc import Callable
from pathlib import Path

from domain.catalog import Catalog, CatalogService
from domain.runtime import Engine, Oracle, SimKernel, parse_seeded_bugs

from .executor import execute_input
from .minimize import minimize_input, reproduces
from .session import SessionResult, fuzz_loop
from .types import FuzzConfig, FuzzInput, InputOutcome, Stats

logger = logging.getLogger(__name__)


def _load_reproducer(source: str | Path | dict) -> tuple[FuzzInput, dict]:
    """接受输入文件、bug 文件或已解析的 dict；bug 文件的输入在 `input` 键下。"""
    data = source if isinstance(source, dict) else json.loads(Path(source).read_text(encoding="utf-8"))
    if "input" in data:
        return FuzzInput.from_dict(data["input"]), data
    return FuzzInput.from_dict(data), {}


class FuzzService:
    @classmethod
    def run_session(
        cls,
        cfg: FuzzConfig,
        *,
        catalog: Catalog | None = None,
        progress: Callable[[Stats], None] | None = None,
    ) -> SessionResult:
        return fuzz_loop(cfg, catalog=catalog, progress=progress)

    @classmethod
    def replay(
        cls,
        source: str | Path | dict,
        *,
        seed_bugs: str | None = None,
        kernel_seed: int | None = None,
        engine: Engine = Engine.BOTH,
        catalog: Catalog | None = None,
    ) -> InputOutcome:
        """在新内核上重放复现输入；未指定时沿用 bug 文件里记录的种子和 bug 集合。"""
        inp, meta = _load_reproducer(source)
        bugs = parse_seeded_bugs(seed_bugs if seed_bugs is not None else meta.get("seed_bugs", "none"))
        seed = kernel_seed if kernel_seed is not None else int(meta.get("kernel_seed", 0))
        kernel = SimKernel(catalog=catalog or CatalogService.get(), seed=seed, seeded_bugs=bugs, engine=engine)
        outcome = execute_input(inp, kernel)
        logger.info("replayed %s: %d finding(s)", inp.digest, len(outcome.bugs))
        return outcome

    @classmethod
    def minimize(
        cls,
        source: str | Path | dict,
        oracle: Oracle,
        *,
        location: str | None = None,
        seed_bugs: str | None = None,
        kernel_seed: int | None = None,
        catalog: Catalog | None = None,
    ) -> FuzzInput | None:
        """返回仍能触发该 oracle 的最小输入；原输入本身不触发时返回 None。"""
        catalog = catalog or CatalogService.get()
        inp, meta = _load_reproducer(source)
        check = reproduces(
            oracle,
            location,
            kernel_seed=kernel_seed if kernel_seed is not None else int(meta.get("kernel_seed", 0)),
            seeded_bugs=parse_seeded_bugs(seed_bugs if seed_bugs is not None else meta.get("seed_bugs", "none")),
            catalog=catalog,
        )
        if not check(inp):
            logger.warning("input %s does not reproduce %s", inp.digest, oracle.value)
            return None
        smaller = minimize_input(inp, check, catalog=catalog)
        logger.info("minimized %s: size %d -> %d", inp.digest, inp.size, smaller.size)
        return smaller
