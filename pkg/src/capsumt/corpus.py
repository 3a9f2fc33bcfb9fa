"""JSONL corpus records and prediction files."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .text import tokenize

_STR_FIELDS = ("features", "romantic", "humorous", "summary")


class CorpusError(ValueError):
    pass


@dataclass
class CorpusRecord:
    id: str
    features: Optional[str] = None
    factual: list[str] = field(default_factory=list)
    romantic: Optional[str] = None
    humorous: Optional[str] = None
    summary: Optional[str] = None
    line: int = 0
    extra: dict = field(default_factory=dict)

    def as_json(self) -> dict:
        d = {"id": self.id}
        if self.features is not None:
            d["features"] = self.features
        if self.factual:
            d["factual"] = list(self.factual)
        for k in ("romantic", "humorous", "summary"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        d.update(self.extra)
        return d


def _record(obj, where: str, base: Path, require_features: bool) -> CorpusRecord:
    if not isinstance(obj, dict):
        raise CorpusError(f"{where}: expected a JSON object")
    if "id" not in obj:
        raise CorpusError(f"{where}: missing field 'id'")
    if not isinstance(obj["id"], str) or not obj["id"]:
        raise CorpusError(f"{where}: field 'id' must be a non-empty string")
    for k in _STR_FIELDS:
        if k in obj and not isinstance(obj[k], str):
            raise CorpusError(f"{where}: field {k!r} must be a string")
    factual = obj.get("factual", [])
    if not isinstance(factual, list) or not all(isinstance(s, str) for s in factual):
        raise CorpusError(f"{where}: field 'factual' must be a list of strings")
    feats = obj.get("features")
    if feats is not None:
        fp = Path(feats)
        feats = str(fp if fp.is_absolute() else base / fp)
        if require_features and not Path(feats).is_file():
            raise CorpusError(f"{where}: field 'features': no such file {feats}")
    elif require_features:
        raise CorpusError(f"{where}: missing field 'features'")
    known = {"id", "factual", *_STR_FIELDS}
    return CorpusRecord(obj["id"], feats, list(factual), obj.get("romantic"), obj.get("humorous"),
                        obj.get("summary"), 0, {k: v for k, v in obj.items() if k not in known})


def parse_lines(lines: Iterable[str], source: str = "<corpus>", base: Path = Path("."),
                require_features: bool = False) -> list[CorpusRecord]:
    records: list[CorpusRecord] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        where = f"{source}:{lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{where}: malformed JSON ({exc.msg})") from exc
        rec = _record(obj, where, base, require_features)
        rec.line = lineno
        if rec.id in seen:
            raise CorpusError(f"{where}: duplicate id {rec.id!r} (first seen at line {seen[rec.id]})")
        seen[rec.id] = lineno
        records.append(rec)
    return records


def parse_corpus(path, require_features: bool = False) -> list[CorpusRecord]:
    """Read and validate a UTF-8 JSONL corpus.  Relative feature paths are
    resolved against the corpus file's directory."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh, str(path), path.parent, require_features)


def write_jsonl(path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_jsonl(path) -> list[dict]:
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
    return rows


def compose_document(factual: str, romantic: str, humorous: str) -> list[str]:
    """Summariser source: the three sentences in fixed order, each ended by '.'."""
    out: list[str] = []
    for sentence in (factual, romantic, humorous):
        toks = tokenize(sentence)
        while toks and toks[-1] == ".":
            toks.pop()
        if not toks:
            raise ValueError("compose_document: empty sentence")
        out += toks + ["."]
    return out
