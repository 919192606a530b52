import random

from .types import Action, ActionKind, SchedulerConfig


def schedule_next(corpus_size: int, cfg: SchedulerConfig, rng: random.Random) -> Action:
    """空语料时只能生成新程序；否则按配置的概率三选一。"""
    if corpus_size == 0:
        return Action(ActionKind.GENERATE)
    draw = rng.random()
    if draw < cfg.p_generate:
        return Action(ActionKind.GENERATE)
    entry = rng.randrange(corpus_size)
    if draw < cfg.p_generate + cfg.p_mutate_program:
        return Action(ActionKind.MUTATE_PROGRAM, entry)
    return Action(ActionKind.MUTATE_AUX, entry)
