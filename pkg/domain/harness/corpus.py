import json
import logging
from dataclasses import dataclass
from pathlib import Path

from domain.astgen import serialize_ast
from domain.catalog import Catalog
from domain.lower import compile_ast, encode_container
from domain.runtime import CoverageMap

from .types import BugRecord, Expressiveness, FuzzInput

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class CorpusEntry:
    input: FuzzInput
    signature: frozenset[int]
    metrics: Expressiveness


class Corpus:
    """按探针新颖性去重的语料；覆盖合并是逐项取并，与插入顺序无关。"""

    def __init__(self, coverage: CoverageMap | None = None):
        self.entries: list[CorpusEntry] = []
        self.coverage = coverage or CoverageMap()
        self._digests: set[str] = set()

    def __len__(self) -> int:
        return len(self.entries)

    def novel(self, signature: frozenset[int]) -> list[int]:
        return self.coverage.new_probes(sorted(signature))

    def consider(self, entry: CorpusEntry, *, insert: bool = True) -> bool:
        """并入覆盖；带来新探针且允许插入时加入语料。"""
        fresh = self.coverage.merge(sorted(entry.signature))
        if not fresh or not insert or entry.input.digest in self._digests:
            return False
        self.entries.append(entry)
        self._digests.add(entry.input.digest)
        return True

    @property
    def covered(self) -> int:
        return self.coverage.covered

    def save(
        self,
        root: str | Path,
        catalog: Catalog,
        *,
        bugs: list[BugRecord] = (),
        manifest: dict | None = None,
    ) -> Path:
        root = Path(root)
        for sub in ("ast", "prog", "inputs", "bugs"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        digests = []
        for entry in self.entries:
            inp = entry.input
            digest = inp.digest
            digests.append(digest)
            (root / "ast" / f"{digest}.ast").write_text(serialize_ast(inp.ast), encoding="utf-8")
            prog = compile_ast(inp.ast, catalog)
            (root / "prog" / f"{digest}.brfp").write_bytes(encode_container(prog, inp.ast.map_deps))
            (root / "inputs" / f"{digest}.json").write_text(json.dumps(inp.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        bug_files = []
        for record in bugs:
            name = f"{record.oracle.value}-{record.reproducer.digest}.json"
            (root / "bugs" / name).write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
            bug_files.append(name)
        body = dict(manifest or {})
        body.update({"entries": digests, "bugs": bug_files, "coverage": self.covered})
        (root / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True), encoding="utf-8")
        logger.info("corpus saved to %s: %d entries, %d bugs", root, len(digests), len(bug_files))
        return root

    @classmethod
    def load_inputs(cls, root: str | Path) -> list[FuzzInput]:
        root = Path(root)
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
        inputs = []
        for digest in manifest.get("entries", []):
            data = json.loads((root / "inputs" / f"{digest}.json").read_text(encoding="utf-8"))
            inputs.append(FuzzInput.from_dict(data))
        return inputs
