"""Command-line entry point tests; each subcommand is driven through `main`."""

import json

import pytest

from setup.bpflab_cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main

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


@pytest.fixture
def leaky(tmp_path):
    path = tmp_path / "leaky.ast"
    path.write_text(LEAKY)
    return path


class TestProgramCommands:
    def test_gen_writes_files(self, tmp_path) -> None:
        out = tmp_path / "gen"
        assert main(["gen", "--seed", "4", "--count", "3", "--prog-type", "xdp", "--out-dir", str(out)]) == EXIT_OK
        files = sorted(out.glob("*.ast"))
        assert len(files) == 3
        assert all(f.read_text().startswith("program XDP") for f in files)

    def test_gen_unknown_type(self, tmp_path) -> None:
        assert main(["gen", "--prog-type", "nope", "--out-dir", str(tmp_path)]) == EXIT_USAGE

    def test_compile_then_disasm(self, leaky, tmp_path, capsys) -> None:
        container = tmp_path / "leaky.brfp"
        assert main(["compile", str(leaky), "-o", str(container)]) == EXIT_OK
        assert container.exists()
        assert main(["disasm", str(container)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "map[0] RINGBUF" in out
        assert "exit" in out

    def test_verify_reports_rules(self, leaky, tmp_path, capsys) -> None:
        bad = tmp_path / "bad.ast"
        bad.write_text(UNBALANCED)
        assert main(["verify", str(leaky)]) == EXIT_OK
        assert main(["verify", "--stats", str(leaky), str(bad)]) == EXIT_FAILURE
        out = capsys.readouterr().out
        assert f"{bad}: ref_leak" in out
        assert "accepted=1/2" in out
        assert "rule.ref_leak=1" in out

    def test_parse_error_fails(self, tmp_path) -> None:
        bad = tmp_path / "broken.ast"
        bad.write_text("program SOCKET_FILTER\nnonsense\n")
        assert main(["compile", str(bad), "-o", str(tmp_path / "x.brfp")]) == EXIT_FAILURE

    def test_missing_file(self, tmp_path) -> None:
        assert main(["disasm", str(tmp_path / "missing.brfp")]) == EXIT_USAGE


class TestRun:
    def test_clean_run(self, leaky, capsys) -> None:
        assert main(["run", str(leaky)]) == EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert result["return_value"] == 0

    def test_seeded_bug_exits_nonzero(self, leaky, capsys) -> None:
        assert main(["run", str(leaky), "--engine", "both", "--seed-bugs", "ringbuf_leak"]) == EXIT_FAILURE
        result = json.loads(capsys.readouterr().out)
        assert result["oracle_findings"][0]["oracle"] == "ref_leak_runtime"

    def test_bad_seed_bugs(self, leaky) -> None:
        assert main(["run", str(leaky), "--seed-bugs", "nope"]) == EXIT_USAGE


class TestFuzzCommands:
    def test_fuzz_minimize_replay(self, tmp_path, capsys) -> None:
        corpus = tmp_path / "corpus"
        stats = tmp_path / "stats.txt"
        args = ["fuzz", "--seed", "2", "--budget", "30", "--corpus", str(corpus), "--stats-out", str(stats), "--seed-bugs", "all"]
        assert main(args) == EXIT_OK
        assert "iterations        30" in capsys.readouterr().out
        assert "iterations=30" in stats.read_text()
        manifest = json.loads((corpus / "manifest.json").read_text())
        assert manifest["seed"] == 2
        for name in manifest["bugs"]:
            record = corpus / "bugs" / name
            assert main(["replay", str(record)]) == EXIT_FAILURE
            oracle = json.loads(record.read_text())["oracle"]
            out = tmp_path / f"min-{name}"
            assert main(["minimize", str(record), "--oracle", oracle, "-o", str(out)]) == EXIT_OK
            assert json.loads(out.read_text())["ast"].startswith("program ")

    def test_minimize_non_reproducing(self, tmp_path, leaky) -> None:
        from domain.astgen import deserialize_ast
        from domain.harness import FuzzInput, TriggerCall, TriggerKind, prologue_for

        ast = deserialize_ast(LEAKY)
        record = tmp_path / "input.json"
        record.write_text(json.dumps(FuzzInput(ast, prologue_for(ast), [TriggerCall(TriggerKind.TEST_RUN)]).to_dict()))
        out = tmp_path / "out.json"
        assert main(["minimize", str(record), "--oracle", "oob_access", "-o", str(out)]) == EXIT_FAILURE
        assert not out.exists()
        assert main(["replay", str(record)]) == EXIT_OK

    def test_bad_budget(self, tmp_path) -> None:
        assert main(["fuzz", "--budget", "ten", "--corpus", str(tmp_path)]) == EXIT_USAGE

    def test_argparse_usage_error(self) -> None:
        with pytest.raises(SystemExit) as exc:
            main(["fuzz", "--engine", "nope"])
        assert exc.value.code == EXIT_USAGE
