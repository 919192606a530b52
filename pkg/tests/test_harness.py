"""Tests for the fuzzing harness: inputs, execution, scheduling, corpus, reports, minimization and sessions."""

import copy
import json
import random
import statistics

import pytest
from pydantic import ValidationError

from domain.astgen import AstgenService, deserialize_ast, serialize_ast
from domain.runtime import Engine, Oracle, SimKernel, parse_seeded_bugs
from domain.harness import (
    ActionKind,
    AuxCall,
    AuxKind,
    Corpus,
    CorpusEntry,
    Expressiveness,
    FuzzConfig,
    FuzzInput,
    FuzzService,
    InputOutcome,
    SchedulerConfig,
    Stats,
    TriggerCall,
    TriggerKind,
    build_input,
    execute_input,
    fuzz_loop,
    minimize_input,
    mutate_aux,
    parse_kv,
    prologue_for,
    rebuild_for_program,
    render_kv,
    render_text,
    reproduces,
    schedule_next,
)
from domain.harness.inputs import AUX_GROWTH, MAX_TRIGGERS

TWO_MAPS = """\
program SOCKET_FILTER
map 0 ARRAY key=4 value=8 entries=4 flags=0x0
map 1 HASH key=4 value=8 entries=4 flags=0x0
buf v0 4
call v1 = map_lookup_elem(&map_0, v0)
call v2 = map_lookup_elem(&map_1, v0)
return 0
"""

KPROBE_NO_MAPS = "program KPROBE\ncall v0 = ktime_get_ns()\nreturn 0\n"

LEAKY = """\
program SOCKET_FILTER
map 0 RINGBUF key=0 value=0 entries=4096 flags=0x0
call v0 = ringbuf_reserve(&map_0, 16, 0)
if v0 != null {
  call ringbuf_discard(v0, 0)
}
return 0
"""

UNBALANCED = """\
program SOCKET_FILTER
map 0 RINGBUF key=0 value=0 entries=4096 flags=0x0
call v0 = ringbuf_reserve(&map_0, 16, 0)
return 0
"""


def fixed_input(text: str, aux: list[AuxCall] = ()) -> FuzzInput:
    ast = deserialize_ast(text)
    return FuzzInput(ast, prologue_for(ast), [TriggerCall(TriggerKind.TEST_RUN, b"\x00" * 32)], list(aux))


def small_config(tmp_path=None, **overrides) -> FuzzConfig:
    values = {
        "seed": 3,
        "budget": "40",
        "seed_bugs": "all",
        "scheduler": SchedulerConfig(batch_size=20),
    }
    if tmp_path is not None:
        values["corpus_dir"] = str(tmp_path / "corpus")
        values["stats_out"] = str(tmp_path / "stats.txt")
    values.update(overrides)
    return FuzzConfig(**values)


class TestInputs:
    """Prologue closure, triggers and syscall-side mutation."""

    def test_prologue_creates_maps_first(self, catalog) -> None:
        calls = prologue_for(deserialize_ast(TWO_MAPS), catalog)
        assert [c.kind for c in calls] == ["map_create", "map_create", "prog_load", "target_create", "prog_attach"]
        assert calls[0].arg == "0:ARRAY"

    def test_prologue_without_maps(self, catalog) -> None:
        calls = prologue_for(deserialize_ast(KPROBE_NO_MAPS), catalog)
        assert [c.kind for c in calls] == ["prog_load", "prog_attach"]

    def test_event_programs_get_event_triggers(self, catalog, rng: random.Random) -> None:
        inp = build_input(deserialize_ast(KPROBE_NO_MAPS), rng, catalog=catalog)
        assert any(t.kind is TriggerKind.EVENT for t in inp.triggers)
        assert inp.aux_calls == []

    def test_aux_calls_target_declared_maps(self, catalog) -> None:
        ast = deserialize_ast(TWO_MAPS)
        for seed in range(20):
            inp = build_input(ast, random.Random(seed), catalog=catalog, max_aux=6)
            assert len(inp.aux_calls) <= 6
            for call in inp.aux_calls:
                assert call.map_ordinal < 2
                assert call.slot <= len(inp.triggers)

    def test_dict_round_trip(self, catalog, rng: random.Random) -> None:
        inp = build_input(deserialize_ast(TWO_MAPS), rng, catalog=catalog, max_aux=4)
        again = FuzzInput.from_dict(json.loads(json.dumps(inp.to_dict())))
        assert again.digest == inp.digest
        assert again.prologue == inp.prologue

    def test_mutate_aux_keeps_program(self, catalog, rng: random.Random) -> None:
        inp = build_input(deserialize_ast(TWO_MAPS), rng, catalog=catalog)
        for _ in range(10):
            child = mutate_aux(inp, rng, catalog=catalog)
            assert serialize_ast(child.ast) == serialize_ast(inp.ast)
            assert child.prologue == inp.prologue
            inp = child

    def test_mutate_aux_accumulates_state(self, catalog) -> None:
        rng = random.Random(5)
        inp = fixed_input(TWO_MAPS, [])
        most_aux = most_triggers = 0
        for _ in range(300):
            inp = mutate_aux(inp, rng, catalog=catalog, max_aux=2)
            assert len(inp.aux_calls) <= 2 * AUX_GROWTH
            assert len(inp.triggers) <= MAX_TRIGGERS
            assert all(call.slot <= len(inp.triggers) for call in inp.aux_calls)
            most_aux = max(most_aux, len(inp.aux_calls))
            most_triggers = max(most_triggers, len(inp.triggers))
        assert most_aux > 2
        assert most_triggers > 1

    def test_rebuild_drops_stale_aux(self, catalog, rng: random.Random) -> None:
        parent = fixed_input(TWO_MAPS, [AuxCall(AuxKind.MAP_LOOKUP, 1, 0, b"\x00" * 4)])
        ast = deserialize_ast(TWO_MAPS)
        ast.map_deps = ast.map_deps[:1]
        ast.stmts = ast.stmts[:2]
        child = rebuild_for_program(parent, ast, rng, catalog=catalog)
        assert child.aux_calls == []
        assert child.triggers == parent.triggers
        assert [c.kind for c in child.prologue].count("map_create") == 1


class TestExecutor:
    def test_good_input(self, catalog) -> None:
        inp = fixed_input(TWO_MAPS, [AuxCall(AuxKind.MAP_UPDATE, 0, 0, b"\x00" * 4, b"\x01" * 8)])
        outcome = execute_input(inp, SimKernel(catalog=catalog))
        assert outcome.loaded and outcome.attached and outcome.executed
        assert outcome.rule_id is None
        assert outcome.metrics.helper_calls == 2 and outcome.metrics.maps == 2
        assert outcome.signature
        assert [r.call for r in outcome.call_log][:3] == ["map_create[0]", "map_create[1]", "prog_load"]

    def test_rejected_program_keeps_going(self, catalog) -> None:
        inp = fixed_input(UNBALANCED, [AuxCall(AuxKind.RINGBUF_CONSUME, 0, 1)])
        outcome = execute_input(inp, SimKernel(catalog=catalog))
        assert not outcome.loaded and not outcome.executed
        assert outcome.rule_id
        calls = [r.call for r in outcome.call_log]
        assert "test_run" in calls
        assert calls[-1] == "ringbuf_consume"
        stats = Stats()
        stats.record(inp, outcome)
        assert stats.rule_histogram == {outcome.rule_id: 1}
        assert stats.loads_succeeded == 0 and stats.attaches_attempted == 0

    def test_bug_reports_carry_digest(self, catalog) -> None:
        inp = fixed_input(LEAKY)
        kernel = SimKernel(catalog=catalog, seeded_bugs=parse_seeded_bugs("ringbuf_leak"))
        outcome = execute_input(inp, kernel)
        assert [b.oracle for b in outcome.bugs] == [Oracle.REF_LEAK_RUNTIME]
        assert outcome.bugs[0].input_digest == inp.digest

    def test_replay_is_deterministic(self, catalog, rng: random.Random) -> None:
        inp = build_input(AstgenService.generate(13, catalog=catalog), rng, catalog=catalog)
        first = execute_input(inp, SimKernel(catalog=catalog, seed=5, engine=Engine.BOTH))
        second = execute_input(inp, SimKernel(catalog=catalog, seed=5, engine=Engine.BOTH))
        assert first.signature == second.signature
        assert first.call_log == second.call_log


class TestScheduler:
    def test_empty_corpus_generates(self, rng: random.Random) -> None:
        for _ in range(20):
            assert schedule_next(0, SchedulerConfig(), rng).kind is ActionKind.GENERATE

    def test_fixed_seed_sequence(self) -> None:
        rng1, rng2 = random.Random(9), random.Random(9)
        first = [schedule_next(5, SchedulerConfig(), rng1) for _ in range(200)]
        second = [schedule_next(5, SchedulerConfig(), rng2) for _ in range(200)]
        assert first == second
        assert all(action.entry < 5 for action in first if action.entry is not None)
        assert {action.kind for action in first} == set(ActionKind)

    def test_probabilities_must_sum_to_one(self) -> None:
        with pytest.raises(ValidationError):
            SchedulerConfig(p_generate=0.5, p_mutate_program=0.5, p_mutate_aux=0.5)


class TestCorpus:
    def entry(self, text: str, signature: set[int]) -> CorpusEntry:
        return CorpusEntry(fixed_input(text), frozenset(signature), Expressiveness(10, 1, 1))

    def test_only_novel_entries_inserted(self) -> None:
        corpus = Corpus()
        assert corpus.consider(self.entry(TWO_MAPS, {1, 2}))
        assert not corpus.consider(self.entry(LEAKY, {2}))
        assert corpus.consider(self.entry(LEAKY, {2, 3}))
        assert len(corpus) == 2
        assert corpus.covered == 3

    def test_blind_merges_coverage_only(self) -> None:
        corpus = Corpus()
        assert not corpus.consider(self.entry(TWO_MAPS, {1, 2}), insert=False)
        assert len(corpus) == 0
        assert corpus.covered == 2

    def test_save_and_load(self, catalog, tmp_path) -> None:
        corpus = Corpus()
        corpus.consider(self.entry(TWO_MAPS, {1}))
        corpus.consider(self.entry(LEAKY, {2}))
        root = corpus.save(tmp_path / "c", catalog, manifest={"seed": 1})
        manifest = json.loads((root / "manifest.json").read_text())
        assert manifest["seed"] == 1 and manifest["coverage"] == 2
        digests = manifest["entries"]
        assert (root / "ast" / f"{digests[0]}.ast").read_text() == TWO_MAPS
        assert (root / "prog" / f"{digests[1]}.brfp").exists()
        loaded = Corpus.load_inputs(root)
        assert [i.digest for i in loaded] == digests


class TestReport:
    def test_empty_session(self) -> None:
        values = parse_kv(render_kv(Stats()))
        assert values["schema"] == "1"
        assert values["load_success_rate"] == "0.0000"
        assert values["helpers_mean"] == "0.00"
        assert values["coverage_curve"] == ""
        assert "load success" in render_text(Stats())

    def test_rates_and_histogram(self) -> None:
        stats = Stats(
            iterations=4,
            loads_attempted=4,
            loads_succeeded=3,
            attaches_attempted=3,
            attaches_succeeded=3,
            rule_histogram={"null_deref": 1},
            findings={"oob_access": 2},
            coverage_curve=[(2, 10), (4, 12)],
        )
        values = parse_kv(render_kv(stats))
        assert values["load_success_rate"] == "0.7500"
        assert values["attach_success_rate"] == "1.0000"
        assert values["rule.null_deref"] == "1"
        assert values["oracle.oob_access"] == "2"
        assert values["top_rules"] == "null_deref:1"
        assert values["coverage_curve"] == "2:10,4:12"

    def test_merge_is_additive(self) -> None:
        a = Stats(iterations=2, insns_max=5, rule_histogram={"x": 1}, programs={"p": False}, helpers_used=[1])
        b = Stats(iterations=3, insns_max=9, rule_histogram={"x": 2, "y": 1}, programs={"p": True}, helpers_used=[2])
        a.merge(b)
        assert a.iterations == 5
        assert a.insns_max == 9
        assert a.rule_histogram == {"x": 3, "y": 1}
        assert a.executed_programs == 1
        assert a.helpers_used == [1, 2]


class TestMinimize:
    def leak_check(self, catalog):
        return reproduces(Oracle.REF_LEAK_RUNTIME, seeded_bugs=parse_seeded_bugs("ringbuf_leak"), catalog=catalog)

    def test_drops_irrelevant_calls(self, catalog) -> None:
        aux = [AuxCall(AuxKind.RINGBUF_CONSUME, 0, slot % 2) for slot in range(50)]
        inp = fixed_input(LEAKY, aux)
        check = self.leak_check(catalog)
        smaller = minimize_input(inp, check, catalog=catalog)
        assert smaller.size < inp.size
        assert smaller.aux_calls == []
        assert check(smaller)

    def test_non_reproducing_input_unchanged(self, catalog) -> None:
        inp = fixed_input(TWO_MAPS)
        assert minimize_input(inp, self.leak_check(catalog), catalog=catalog) is inp

    def test_service_minimize(self, catalog) -> None:
        inp = fixed_input(LEAKY, [AuxCall(AuxKind.RINGBUF_CONSUME, 0, 0)] * 3)
        record = {"input": inp.to_dict(), "kernel_seed": 0, "seed_bugs": "ringbuf_leak"}
        smaller = FuzzService.minimize(record, Oracle.REF_LEAK_RUNTIME, catalog=catalog)
        assert smaller is not None and smaller.aux_calls == []
        assert FuzzService.minimize(record, Oracle.OOB_ACCESS, catalog=catalog) is None

    def test_service_replay_uses_recorded_bugs(self, catalog, tmp_path) -> None:
        record = {"input": fixed_input(LEAKY).to_dict(), "kernel_seed": 0, "seed_bugs": "ringbuf_leak"}
        path = tmp_path / "bug.json"
        path.write_text(json.dumps(record))
        outcome = FuzzService.replay(path, catalog=catalog)
        assert isinstance(outcome, InputOutcome)
        assert [b.oracle for b in outcome.bugs] == [Oracle.REF_LEAK_RUNTIME]
        assert FuzzService.replay(path, seed_bugs="none", catalog=catalog).bugs == []


class TestConfig:
    def test_budget_forms(self) -> None:
        assert FuzzConfig(budget="600s").seconds == 600
        assert FuzzConfig(budget="600s").iterations is None
        assert FuzzConfig(budget="250").iterations == 250

    @pytest.mark.parametrize("budget", ["10m", "", "s", "-5"])
    def test_bad_budget(self, budget: str) -> None:
        with pytest.raises(ValidationError):
            FuzzConfig(budget=budget)

    def test_bad_seed_bugs(self) -> None:
        with pytest.raises(ValidationError):
            FuzzConfig(seed_bugs="nope")


class TestSession:
    def test_small_session(self, catalog, tmp_path) -> None:
        cfg = small_config(tmp_path)
        result = fuzz_loop(cfg, catalog=catalog)
        stats = result.stats
        assert stats.iterations == 40
        assert stats.loads_attempted == 40
        assert stats.loads_succeeded <= stats.loads_attempted
        assert stats.attaches_succeeded <= stats.attaches_attempted
        assert len(result.corpus) > 0
        assert [it for it, _ in stats.coverage_curve] == [20, 40]
        curve = [cov for _, cov in stats.coverage_curve]
        assert curve == sorted(curve)
        assert (tmp_path / "stats.txt").read_text() == render_kv(stats)
        manifest = json.loads((tmp_path / "corpus" / "manifest.json").read_text())
        assert len(manifest["entries"]) == len(result.corpus)
        assert len(manifest["bugs"]) == len(result.bugs)

    def test_stored_entries_were_accepted(self, catalog) -> None:
        result = fuzz_loop(small_config(), catalog=catalog)
        for entry in result.corpus.entries:
            outcome = execute_input(entry.input, SimKernel(catalog=catalog, seed=3, seeded_bugs=parse_seeded_bugs("all")))
            assert outcome.loaded

    def test_same_seed_same_session(self, catalog) -> None:
        first = fuzz_loop(small_config(), catalog=catalog)
        second = fuzz_loop(small_config(), catalog=catalog)
        assert render_kv(first.stats) == render_kv(second.stats)
        assert [e.input.digest for e in first.corpus.entries] == [e.input.digest for e in second.corpus.entries]
        assert [b.report.key for b in first.bugs] == [b.report.key for b in second.bugs]

    def test_blind_session_keeps_no_corpus(self, catalog) -> None:
        result = fuzz_loop(small_config(blind=True), catalog=catalog)
        assert len(result.corpus) == 0
        assert result.stats.coverage > 0
        assert result.stats.programs_generated == 40

    def test_progress_callback(self, catalog) -> None:
        seen = []
        FuzzService.run_session(small_config(), catalog=catalog, progress=lambda s: seen.append(s.iterations))
        assert seen == [20, 40]

    def test_bug_records_replay(self, catalog) -> None:
        result = fuzz_loop(small_config(budget="100"), catalog=catalog)
        for record in result.bugs:
            outcome = FuzzService.replay(record.to_dict(), catalog=catalog)
            assert record.report.key in {b.key for b in outcome.bugs}

    @pytest.mark.slow
    def test_guided_beats_blind(self, catalog) -> None:
        ratios = []
        for seed in range(5):
            guided = fuzz_loop(small_config(seed=seed, budget="800", seed_bugs="none"), catalog=catalog)
            blind = fuzz_loop(small_config(seed=seed, budget="800", seed_bugs="none", blind=True), catalog=catalog)
            assert blind.stats.corpus_size == 0
            ratios.append(guided.stats.coverage / blind.stats.coverage)
        assert statistics.median(ratios) >= 1.2, ratios

    @pytest.mark.slow
    def test_parallel_session_is_deterministic(self, catalog) -> None:
        cfg = small_config(workers=2, budget="80")
        first = fuzz_loop(cfg, catalog=catalog)
        second = fuzz_loop(copy.deepcopy(cfg), catalog=catalog)
        assert render_kv(first.stats) == render_kv(second.stats)
        assert first.stats.iterations == 80

    @pytest.mark.slow
    def test_seeded_bugs_found(self, catalog) -> None:
        result = fuzz_loop(small_config(budget="4000", scheduler=SchedulerConfig(batch_size=100)), catalog=catalog)
        stats = result.stats
        assert stats.attaches_succeeded / stats.attaches_attempted >= 0.85
        assert stats.executed_programs / stats.unique_programs >= 0.6
        assert len({b.oracle for b in result.bugs}) >= 4, sorted(b.oracle.value for b in result.bugs)
        for record in result.bugs:
            replayed = FuzzService.replay(record.to_dict(), catalog=catalog)
            assert record.report.key in {b.key for b in replayed.bugs}
