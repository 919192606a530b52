"""模糊会话：按 epoch 分派给 worker，再由会话按 worker 序号合并结果。"""

import logging
import multiprocessing
import random
import time
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from domain.astgen import generate_program, mutate_program
from domain.catalog import Catalog, CatalogService
from domain.runtime import BugReport, CoverageMap, SimKernel

from .corpus import Corpus, CorpusEntry
from .executor import execute_input
from .inputs import build_input, mutate_aux, rebuild_for_program
from .report import render_kv
from .scheduler import schedule_next
from .types import ActionKind, BugRecord, Expressiveness, FuzzConfig, FuzzInput, Stats

logger = logging.getLogger(__name__)


@dataclass
class EpochJob:
    worker: int
    epoch: int
    iterations: int
    config: dict
    corpus: list[dict]
    coverage: np.ndarray
    known_bugs: set[tuple[str, str]]


@dataclass
class Discovery:
    input: dict
    signature: list[int]
    metrics: tuple[int, int, int]


@dataclass
class EpochReport:
    worker: int
    stats: Stats
    discoveries: list[Discovery] = field(default_factory=list)
    bugs: list[tuple[dict, dict]] = field(default_factory=list)


@dataclass
class SessionResult:
    stats: Stats
    corpus: Corpus
    bugs: list[BugRecord]


def epoch_seed(seed: int, epoch: int, worker: int) -> random.Random:
    return random.Random(f"bpflab:{seed}:{epoch}:{worker}")


def _next_input(cfg: FuzzConfig, local: list[FuzzInput], rng: random.Random, catalog: Catalog, stats: Stats) -> FuzzInput:
    action = schedule_next(len(local), cfg.scheduler, rng)
    if action.kind is ActionKind.GENERATE:
        stats.programs_generated += 1
        ast = generate_program(cfg.gen, catalog=catalog, rng=rng)
        return build_input(ast, rng, catalog=catalog, max_aux=cfg.max_aux_calls)
    parent = local[action.entry]
    if action.kind is ActionKind.MUTATE_PROGRAM:
        ast = mutate_program(parent.ast, rng, catalog=catalog, cfg=cfg.gen)
        return rebuild_for_program(parent, ast, rng, catalog=catalog, max_aux=cfg.max_aux_calls)
    return mutate_aux(parent, rng, catalog=catalog, max_aux=cfg.max_aux_calls)


def run_epoch(job: EpochJob) -> EpochReport:
    """worker 的一个 epoch：本地语料副本上跑固定次数，只回传新东西。"""
    cfg = FuzzConfig.model_validate(job.config)
    catalog = CatalogService.get()
    rng = epoch_seed(cfg.seed, job.epoch, job.worker)
    local = [FuzzInput.from_dict(d) for d in job.corpus]
    coverage = CoverageMap(job.coverage.copy())
    known = set(job.known_bugs)
    report = EpochReport(job.worker, Stats())
    for _ in range(job.iterations):
        inp = _next_input(cfg, local, rng, catalog, report.stats)
        kernel = SimKernel(catalog=catalog, seed=cfg.seed, seeded_bugs=cfg.bugs, engine=cfg.engine, worker=job.worker)
        outcome = execute_input(inp, kernel)
        report.stats.record(inp, outcome)
        for bug in outcome.bugs:
            if bug.key not in known:
                known.add(bug.key)
                report.bugs.append((bug.model_dump(mode="json"), inp.to_dict()))
                logger.info("worker %d found %s at %s", job.worker, bug.oracle.value, bug.location)
        if not outcome.loaded:
            continue
        if coverage.merge(sorted(outcome.signature)):
            m = outcome.metrics or Expressiveness()
            report.discoveries.append(Discovery(inp.to_dict(), sorted(outcome.signature), (m.insns, m.helper_calls, m.maps)))
            if not cfg.blind:
                local.append(inp)
    return report


def _shares(cfg: FuzzConfig, done: int) -> list[int]:
    per_worker = cfg.scheduler.batch_size
    if cfg.iterations is None:
        return [per_worker] * cfg.workers
    remaining = min(cfg.iterations - done, per_worker * cfg.workers)
    base, extra = divmod(remaining, cfg.workers)
    return [base + (1 if w < extra else 0) for w in range(cfg.workers)]


def fuzz_loop(
    cfg: FuzzConfig,
    *,
    catalog: Catalog | None = None,
    progress: Callable[[Stats], None] | None = None,
) -> SessionResult:
    """调度 → 组装 → 执行 → 新颖则入语料；预算按迭代数或秒数，在 epoch 边界检查。"""
    catalog = catalog or CatalogService.get()
    corpus = Corpus()
    stats = Stats()
    bugs: dict[tuple[str, str], BugRecord] = {}
    started = time.monotonic()
    done = 0
    epoch = 0
    pool = None
    if cfg.workers > 1:
        pool = ProcessPoolExecutor(cfg.workers, mp_context=multiprocessing.get_context("spawn"))
    logger.info("fuzz session: seed=%d budget=%s workers=%d bugs=%s", cfg.seed, cfg.budget, cfg.workers, cfg.seed_bugs)
    try:
        while True:
            if cfg.iterations is not None and done >= cfg.iterations:
                break
            if cfg.seconds is not None and time.monotonic() - started >= cfg.seconds:
                break
            shares = _shares(cfg, done)
            snapshot = [entry.input.to_dict() for entry in corpus.entries]
            jobs = [
                EpochJob(w, epoch, n, cfg.model_dump(mode="json"), snapshot, corpus.coverage.counts, set(bugs))
                for w, n in enumerate(shares)
                if n > 0
            ]
            reports = list(pool.map(run_epoch, jobs)) if pool else [run_epoch(job) for job in jobs]
            for report in sorted(reports, key=lambda r: r.worker):
                stats.merge(report.stats)
                for found in report.discoveries:
                    entry = CorpusEntry(FuzzInput.from_dict(found.input), frozenset(found.signature), Expressiveness(*found.metrics))
                    corpus.consider(entry, insert=not cfg.blind)
                for bug, raw in report.bugs:
                    report_obj = BugReport.model_validate(bug)
                    if report_obj.key not in bugs:
                        bugs[report_obj.key] = BugRecord(report_obj, FuzzInput.from_dict(raw), cfg.seed, cfg.seed_bugs)
            done += sum(shares)
            epoch += 1
            stats.coverage = corpus.covered
            stats.corpus_size = len(corpus)
            stats.coverage_curve.append((stats.iterations, corpus.covered))
            logger.info("epoch %d: %d iterations, coverage %d, corpus %d, bugs %d", epoch, stats.iterations, corpus.covered, len(corpus), len(bugs))
            if cfg.stats_out:
                write_stats(cfg.stats_out, stats)
            if progress is not None:
                progress(stats)
    finally:
        if pool is not None:
            pool.shutdown()

    records = list(bugs.values())
    if cfg.corpus_dir:
        corpus.save(
            cfg.corpus_dir,
            catalog,
            bugs=records,
            manifest={"seed": cfg.seed, "seed_bugs": cfg.seed_bugs, "budget": cfg.budget, "workers": cfg.workers, "blind": cfg.blind},
        )
    if cfg.stats_out:
        write_stats(cfg.stats_out, stats)
    return SessionResult(stats, corpus, records)


def write_stats(path: str | Path, stats: Stats) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_kv(stats), encoding="utf-8")
    return path
