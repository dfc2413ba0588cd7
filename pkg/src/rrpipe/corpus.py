"""Corpus, query and relevance-judgment types with JSON Lines loaders.

Records follow this layout::

    corpus:  {"id": "...", "content": "..."}
    queries: {"id": "...", "query": "...", "gold_ids": [...], "excluded_ids": [...]}

Field names are configurable through :class:`FieldMap`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .errors import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Document:
    id: str
    text: str

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise DataError(f"document id must be a non-empty string, got {self.id!r}")
        if not isinstance(self.text, str):
            raise DataError(f"document {self.id!r}: text must be a string")


@dataclass(frozen=True)
class Chunk:
    """A fragment of a document. ``doc_id`` is inherited, never reassigned.

    ``overlap_chars`` is the length of the prefix copied from the previous
    chunk (including the joining space); ``text[overlap_chars:]`` is the
    chunk's own content.
    """

    doc_id: str
    chunk_index: int
    text: str
    token_count: int
    overlap_chars: int = 0

    def __post_init__(self):
        if self.chunk_index < 0:
            raise DataError(f"chunk_index must be >= 0, got {self.chunk_index}")
        if not self.text:
            raise DataError(f"chunk {self.doc_id}#{self.chunk_index} has empty text")
        if self.token_count < 0:
            raise DataError("token_count must be >= 0")
        if not 0 <= self.overlap_chars < len(self.text):
            raise DataError("overlap_chars must leave non-empty chunk content")

    @property
    def key(self) -> tuple[str, int]:
        return (self.doc_id, self.chunk_index)

    @property
    def core_text(self) -> str:
        return self.text[self.overlap_chars:]


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    dataset: str | None = None

    def __post_init__(self):
        if not self.id:
            raise DataError("query id must be non-empty")
        if not isinstance(self.text, str) or not self.text.strip():
            raise DataError(f"query {self.id!r} has empty text")


@dataclass(frozen=True)
class Judgments:
    gold: Mapping[str, frozenset[str]]
    excluded: Mapping[str, frozenset[str]] = field(default_factory=dict)
    dataset: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for qid, gold in self.gold.items():
            if not gold:
                raise DataError(f"query {qid!r} has no gold ids")
            overlap = gold & self.excluded.get(qid, frozenset())
            if overlap:
                raise DataError(
                    f"query {qid!r}: ids both gold and excluded: {sorted(overlap)}"
                )

    def excluded_for(self, qid: str) -> frozenset[str]:
        return self.excluded.get(qid, frozenset())

    def __len__(self):
        return len(self.gold)


@dataclass(frozen=True)
class FieldMap:
    """On-disk field names. Defaults match the layout above."""

    doc_id: str = "id"
    doc_text: str = "content"
    query_id: str = "id"
    query_text: str = "query"
    judgment_query_id: str = "query_id"
    gold_ids: str = "gold_ids"
    excluded_ids: str = "excluded_ids"
    dataset: str = "dataset"


DEFAULT_FIELDS = FieldMap()


def iter_jsonl(path: str | Path, strict: bool = True) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, record)`` pairs; blank lines are ignored.

    In permissive mode malformed lines are skipped and counted in a warning.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    bad = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if not isinstance(record, dict):
                    raise ValueError("record is not a JSON object")
            except ValueError as exc:
                if strict:
                    raise DataError(f"{path}:{lineno}: malformed record ({exc})") from exc
                bad += 1
                continue
            yield lineno, record
    if bad:
        logger.warning("%s: skipped %d malformed line(s)", path, bad)


def write_jsonl(path: str | Path, records: Iterable[Mapping[str, Any]]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
            n += 1
    return n


def _require(record: dict, key: str, where: str):
    if key not in record:
        raise DataError(f"{where}: missing field {key!r}")
    return record[key]


def load_corpus(
    path: str | Path,
    fields: FieldMap = DEFAULT_FIELDS,
    strict: bool = True,
    allow_empty: bool = False,
) -> list[Document]:
    """Load a corpus file. Duplicate ids and malformed records are rejected
    (or skipped and counted when ``strict`` is false)."""
    docs: list[Document] = []
    seen: dict[str, int] = {}
    skipped = 0
    for lineno, rec in iter_jsonl(path, strict=strict):
        where = f"{path}:{lineno}"
        try:
            doc_id = _require(rec, fields.doc_id, where)
            text = _require(rec, fields.doc_text, where)
            if not isinstance(doc_id, str) or not isinstance(text, str):
                raise DataError(f"{where}: id and text must be strings")
            if not text and not allow_empty:
                raise DataError(f"{where}: document {doc_id!r} has empty text")
            if doc_id in seen:
                raise DataError(
                    f"{where}: duplicate document id {doc_id!r} "
                    f"(line {lineno}, first seen on line {seen[doc_id]})"
                )
            doc = Document(doc_id, text)
        except DataError:
            if strict:
                raise
            skipped += 1
            continue
        seen[doc_id] = lineno
        docs.append(doc)
    if skipped:
        logger.warning("%s: skipped %d invalid record(s)", path, skipped)
    if not docs:
        raise DataError(f"{path}: corpus contains no documents")
    return docs


def dump_corpus(path: str | Path, docs: Iterable[Document], fields: FieldMap = DEFAULT_FIELDS) -> int:
    return write_jsonl(path, ({fields.doc_id: d.id, fields.doc_text: d.text} for d in docs))


def load_queries(path: str | Path, fields: FieldMap = DEFAULT_FIELDS, strict: bool = True) -> list[Query]:
    queries: list[Query] = []
    seen: set[str] = set()
    for lineno, rec in iter_jsonl(path, strict=strict):
        where = f"{path}:{lineno}"
        try:
            qid = _require(rec, fields.query_id, where)
            text = _require(rec, fields.query_text, where)
            if qid in seen:
                raise DataError(f"{where}: duplicate query id {qid!r}")
            q = Query(str(qid), text, rec.get(fields.dataset))
        except DataError:
            if strict:
                raise
            continue
        seen.add(q.id)
        queries.append(q)
    return queries


def load_judgments(path: str | Path, fields: FieldMap = DEFAULT_FIELDS, strict: bool = True) -> Judgments:
    """Read gold/excluded ids per query.

    The query id is taken from ``judgment_query_id`` and falls back to
    ``query_id``, so a query file carrying gold ids doubles as a judgments file.
    """
    gold: dict[str, frozenset[str]] = {}
    excluded: dict[str, frozenset[str]] = {}
    dataset: dict[str, str] = {}
    for lineno, rec in iter_jsonl(path, strict=strict):
        where = f"{path}:{lineno}"
        qid = rec.get(fields.judgment_query_id, rec.get(fields.query_id))
        if qid is None:
            raise DataError(f"{where}: missing query id")
        qid = str(qid)
        g = frozenset(_require(rec, fields.gold_ids, where))
        x = frozenset(rec.get(fields.excluded_ids) or ())
        if not g:
            raise DataError(f"{where}: query {qid!r} has empty gold_ids")
        if g & x:
            raise DataError(f"{where}: query {qid!r} has ids both gold and excluded: {sorted(g & x)}")
        if qid in gold:
            raise DataError(f"{where}: duplicate judgments for query {qid!r}")
        gold[qid] = g
        if x:
            excluded[qid] = x
        if rec.get(fields.dataset):
            dataset[qid] = str(rec[fields.dataset])
    return Judgments(gold, excluded, dataset)


def dump_queries(path: str | Path, queries: Iterable[Query], judgments: Judgments | None = None,
                 fields: FieldMap = DEFAULT_FIELDS) -> int:
    def records():
        for q in queries:
            rec: dict[str, Any] = {fields.query_id: q.id, fields.query_text: q.text}
            if judgments is not None and q.id in judgments.gold:
                rec[fields.gold_ids] = sorted(judgments.gold[q.id])
                rec[fields.excluded_ids] = sorted(judgments.excluded_for(q.id))
            if q.dataset:
                rec[fields.dataset] = q.dataset
            yield rec

    return write_jsonl(path, records())


def chunk_record(chunk: Chunk) -> dict:
    return {
        "doc_id": chunk.doc_id,
        "chunk_index": chunk.chunk_index,
        "text": chunk.text,
        "token_count": chunk.token_count,
        "overlap_chars": chunk.overlap_chars,
    }


def dump_chunks(path: str | Path, chunks: Iterable[Chunk]) -> int:
    return write_jsonl(path, (chunk_record(c) for c in chunks))


def load_chunks(path: str | Path, strict: bool = True) -> list[Chunk]:
    chunks: list[Chunk] = []
    seen: set[tuple[str, int]] = set()
    for lineno, rec in iter_jsonl(path, strict=strict):
        where = f"{path}:{lineno}"
        try:
            c = Chunk(
                doc_id=str(_require(rec, "doc_id", where)),
                chunk_index=int(_require(rec, "chunk_index", where)),
                text=_require(rec, "text", where),
                token_count=int(_require(rec, "token_count", where)),
                overlap_chars=int(rec.get("overlap_chars", 0)),
            )
            if c.key in seen:
                raise DataError(f"{where}: duplicate chunk {c.doc_id}#{c.chunk_index}")
        except (DataError, TypeError, ValueError) as exc:
            if strict:
                raise exc if isinstance(exc, DataError) else DataError(f"{where}: {exc}")
            continue
        seen.add(c.key)
        chunks.append(c)
    by_doc: dict[str, list[int]] = {}
    for c in chunks:
        by_doc.setdefault(c.doc_id, []).append(c.chunk_index)
    for doc_id, idx in by_doc.items():
        if sorted(idx) != list(range(len(idx))):
            raise DataError(f"{path}: chunk indices of {doc_id!r} are not 0..{len(idx) - 1}")
    return chunks


def is_chunk_file(path: str | Path) -> bool:
    """True when the first record of ``path`` looks like a chunk record."""
    for _, rec in iter_jsonl(path):
        return "doc_id" in rec and "chunk_index" in rec
    return False


def documents_from_chunks(chunks: Iterable[Chunk]) -> list[Document]:
    """Rebuild one text per doc_id by joining chunk contents without overlaps."""
    parts: dict[str, list[tuple[int, str]]] = {}
    for c in chunks:
        parts.setdefault(c.doc_id, []).append((c.chunk_index, c.core_text))
    return [
        Document(doc_id, " ".join(t for _, t in sorted(pieces)))
        for doc_id, pieces in parts.items()
    ]
