#!/usr/bin/env python3
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from pydantic import ValidationError

from domain.astgen import AstgenService, AstParseError, GenerationError, ProgramAst
from domain.catalog import CatalogError, CatalogService, ProgramTypeId
from domain.config import VERSION, ConfigService
from domain.harness import FuzzConfig, FuzzService, report_stats
from domain.isa import BytecodeError, RawProgram, disassemble
from domain.lower import CompileError, LoadError, LowerService
from domain.runtime import Engine, Oracle, RuntimeService, SyscallError, parse_seeded_bugs
from domain.verifier import VerifierError, VerifierService

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

logger = logging.getLogger("bpflab")


def _load_program(path: Path) -> tuple[RawProgram, list, ProgramAst | None]:
    """`.ast` 先解析再编译；其余按 BRFP 容器读取。"""
    if path.suffix == ".ast":
        ast = AstgenService.parse(path.read_text(encoding="utf-8"))
        return LowerService.compile(ast), ast.map_deps, ast
    prog, deps = LowerService.read_container(path)
    return prog, deps, None


def _prog_type(raw: str | None) -> ProgramTypeId | None:
    if raw is None:
        return None
    try:
        return ProgramTypeId[raw.upper()]
    except KeyError:
        raise ValueError(f"unknown program type {raw!r}; expected one of {', '.join(p.name for p in ProgramTypeId)}") from None


def _cmd_gen(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    programs = AstgenService.generate_many(args.count, args.seed, _prog_type(args.prog_type))
    for i, ast in enumerate(programs):
        path = out_dir / f"{i:05d}-{ast.prog_type.name.lower()}.ast"
        path.write_text(AstgenService.render(ast), encoding="utf-8")
    print(f"wrote {len(programs)} program(s) to {out_dir}", file=sys.stderr)
    return EXIT_OK


def _cmd_compile(args: argparse.Namespace) -> int:
    ast = AstgenService.parse(Path(args.ast_file).read_text(encoding="utf-8"))
    LowerService.write_container(args.output, LowerService.compile(ast), ast.map_deps)
    return EXIT_OK


def _cmd_disasm(args: argparse.Namespace) -> int:
    prog, deps, _ = _load_program(Path(args.file))
    print(f"; section {prog.section_name}, {len(deps)} map(s)")
    for ordinal, spec in enumerate(deps):
        print(f"; map[{ordinal}] {spec.map_type.name} key={spec.key_size} value={spec.value_size} entries={spec.max_entries}")
    print(disassemble(prog, CatalogService.get().helper_names))
    return EXIT_OK


def _cmd_verify(args: argparse.Namespace) -> int:
    rules: Counter[str] = Counter()
    accepted = 0
    for name in args.files:
        try:
            prog, deps, _ = _load_program(Path(name))
            VerifierService.verify(prog, deps)
        except (VerifierError, BytecodeError, LoadError) as exc:
            rules[exc.rule_id] += 1
            print(f"{name}: {exc.rule_id}")
            continue
        accepted += 1
        print(f"{name}: ok")
    if args.stats:
        total = len(args.files)
        print(f"accepted={accepted}/{total}")
        for rule_id, count in rules.most_common():
            print(f"rule.{rule_id}={count}")
    return EXIT_OK if not rules else EXIT_FAILURE


def _cmd_run(args: argparse.Namespace) -> int:
    path = Path(args.file)
    source = AstgenService.parse(path.read_text(encoding="utf-8")) if path.suffix == ".ast" else path.read_bytes()
    payload = Path(args.payload).read_bytes() if args.payload else b""
    result = RuntimeService.run(
        source,
        payload,
        engine=Engine(args.engine),
        seeded_bugs=parse_seeded_bugs(args.seed_bugs),
        seed=args.seed,
        interrupt=args.interrupt,
    )
    print(json.dumps(result.model_dump(mode="json"), indent=2))
    return EXIT_FAILURE if result.oracle_findings else EXIT_OK


def _cmd_fuzz(args: argparse.Namespace) -> int:
    settings = ConfigService.settings()
    cfg = FuzzConfig(
        seed=args.seed if args.seed is not None else settings.seed,
        budget=args.budget,
        workers=args.workers if args.workers is not None else settings.workers,
        corpus_dir=args.corpus or settings.corpus_dir,
        seed_bugs=args.seed_bugs if args.seed_bugs is not None else settings.seed_bugs,
        stats_out=args.stats_out,
        blind=args.blind,
        engine=Engine(args.engine),
    )
    result = FuzzService.run_session(cfg)
    text, _ = report_stats(result.stats)
    print(text)
    for bug in result.bugs:
        print(f"bug {bug.oracle.value} at {bug.report.location} (input {bug.reproducer.digest})")
    return EXIT_OK


def _cmd_minimize(args: argparse.Namespace) -> int:
    smaller = FuzzService.minimize(args.input, Oracle(args.oracle), location=args.location, seed_bugs=args.seed_bugs)
    if smaller is None:
        print(f"{args.input} does not trigger {args.oracle}", file=sys.stderr)
        return EXIT_FAILURE
    Path(args.output).write_text(json.dumps(smaller.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    print(f"size {smaller.size}, written to {args.output}", file=sys.stderr)
    return EXIT_OK


def _cmd_replay(args: argparse.Namespace) -> int:
    outcome = FuzzService.replay(args.input, seed_bugs=args.seed_bugs)
    for record in outcome.call_log:
        print(f"{'ok ' if record.ok else 'ERR'} {record.call} {record.detail}".rstrip())
    if outcome.rule_id:
        print(f"rejected: {outcome.rule_id}")
    for bug in outcome.bugs:
        print(f"bug {bug.oracle.value} at {bug.location}: {bug.detail}")
    return EXIT_FAILURE if outcome.bugs else EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bpflab", description=f"bpflab {VERSION}")
    parser.add_argument("-v", "--verbose", action="store_true", help="DEBUG 日志")
    parser.add_argument("--catalog", help="覆盖内置目录的 JSON 文件")
    subparsers = parser.add_subparsers(dest="command", required=True)
    engines = [e.value for e in Engine]

    gen = subparsers.add_parser("gen", help="生成 AST 文本程序")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--prog-type", help="固定程序类型（默认随机）")
    gen.add_argument("--count", type=int, default=1)
    gen.add_argument("--out-dir", required=True)
    gen.set_defaults(func=_cmd_gen)

    comp = subparsers.add_parser("compile", help="AST 编译为 BRFP 容器")
    comp.add_argument("ast_file")
    comp.add_argument("-o", "--output", required=True)
    comp.set_defaults(func=_cmd_compile)

    disasm = subparsers.add_parser("disasm", help="反汇编")
    disasm.add_argument("file")
    disasm.set_defaults(func=_cmd_disasm)

    verify = subparsers.add_parser("verify", help="静态校验，输出 ok 或 rule_id")
    verify.add_argument("files", nargs="+")
    verify.add_argument("--stats", action="store_true", help="打印 rule_id 直方图")
    verify.set_defaults(func=_cmd_verify)

    run = subparsers.add_parser("run", help="在模拟内核中运行一次")
    run.add_argument("file")
    run.add_argument("--payload", help="数据包 / 上下文字节文件")
    run.add_argument("--engine", choices=engines, default=Engine.INTERP.value)
    run.add_argument("--seed-bugs", default="none")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--interrupt", action="store_true", help="以模拟中断上下文触发")
    run.set_defaults(func=_cmd_run)

    fuzz = subparsers.add_parser("fuzz", help="覆盖引导的模糊测试会话")
    fuzz.add_argument("--seed", type=int)
    fuzz.add_argument("--budget", default="1000", help="迭代次数（如 1000）或秒数（如 600s）")
    fuzz.add_argument("--workers", type=int)
    fuzz.add_argument("--corpus")
    fuzz.add_argument("--seed-bugs")
    fuzz.add_argument("--stats-out")
    fuzz.add_argument("--blind", action="store_true", help="关闭覆盖反馈")
    fuzz.add_argument("--engine", choices=engines, default=Engine.BOTH.value)
    fuzz.set_defaults(func=_cmd_fuzz)

    minimize = subparsers.add_parser("minimize", help="最小化复现输入")
    minimize.add_argument("input")
    minimize.add_argument("--oracle", required=True, choices=[o.value for o in Oracle])
    minimize.add_argument("--location")
    minimize.add_argument("--seed-bugs")
    minimize.add_argument("-o", "--output", required=True)
    minimize.set_defaults(func=_cmd_minimize)

    replay = subparsers.add_parser("replay", help="重放复现输入")
    replay.add_argument("input")
    replay.add_argument("--seed-bugs")
    replay.set_defaults(func=_cmd_replay)

    return parser


def _setup_logging(verbose: bool) -> None:
    level = "DEBUG" if verbose else ConfigService.settings().log_level
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging(args.verbose)
        if args.catalog:
            # 子进程 worker 通过环境变量拿到同一份目录
            os.environ["BPFLAB_CATALOG"] = str(Path(args.catalog).resolve())
            CatalogService.use(CatalogService.load(args.catalog))
        return int(args.func(args))
    except (AstParseError, CompileError, LoadError, VerifierError, BytecodeError, SyscallError, GenerationError) as exc:
        print(f"bpflab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ValidationError, ValueError, CatalogError, FileNotFoundError) as exc:
        print(f"bpflab: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
