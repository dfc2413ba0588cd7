"""Okapi BM25 over an in-memory inverted index."""

from __future__ import annotations

import json
import math
import re
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable

from ._binfmt import read_blob, write_blob
from .errors import ConfigError, DataError
from .fusion import ScoredList

_TOKEN = re.compile(r"[^\W_]+")

ENGLISH_STOPWORDS = frozenset(
    """a about above after again against all am an and any are as at be because been before being
    below between both but by can did do does doing down during each few for from further had has
    have having he her here hers herself him himself his how i if in into is it its itself just me
    more most my myself no nor not now of off on once only or other our ours ourselves out over own
    same she should so some such than that the their theirs them themselves then there these they
    this those through to too under until up very was we were what when where which while who whom
    why will with you your yours yourself yourselves""".split()
)


def s_stem(term: str) -> str:
    """Harman's S-stemmer: strips common English plural endings."""
    if len(term) > 3 and term.endswith("ies") and not term.endswith(("eies", "aies")):
        return term[:-3] + "y"
    if len(term) > 2 and term.endswith("es") and not term.endswith(("aes", "ees", "oes")):
        return term[:-1]
    if len(term) > 3 and term.endswith("s") and not term.endswith(("us", "ss")):
        return term[:-1]
    return term


@dataclass(frozen=True)
class Analyzer:
    """Lowercase, split on non-alphanumeric runs; optional stopwords and stemming."""

    stopwords: bool = False
    stem: bool = False

    def __call__(self, text: str) -> list[str]:
        terms = _TOKEN.findall(text.lower())
        if self.stopwords:
            terms = [t for t in terms if t not in ENGLISH_STOPWORDS]
        if self.stem:
            terms = [s_stem(t) for t in terms]
        return terms


def _key(item_id):
    return tuple(item_id) if isinstance(item_id, list) else item_id


@dataclass(frozen=True, eq=False)
class Bm25Index:
    postings: dict[str, list[tuple[Hashable, int]]]
    doc_lengths: dict[Hashable, int]
    avg_doc_length: float
    item_count: int
    k1: float = 1.2
    b: float = 0.75
    analyzer: Analyzer = field(default_factory=Analyzer)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.item_count - df + 0.5) / (df + 0.5))

    def _norm(self, item_id) -> float:
        if self.avg_doc_length == 0:
            return self.k1
        return self.k1 * (1.0 - self.b + self.b * self.doc_lengths[item_id] / self.avg_doc_length)

    def term_frequency(self, term: str, item_id) -> int:
        for pid, tf in self.postings.get(term, ()):
            if pid == item_id:
                return tf
        return 0

    def save(self, path) -> None:
        header = {
            "k1": self.k1,
            "b": self.b,
            "stopwords": self.analyzer.stopwords,
            "stem": self.analyzer.stem,
            "item_count": self.item_count,
        }
        body = {
            "doc_lengths": [[_jsonable(i), n] for i, n in self.doc_lengths.items()],
            "postings": {t: [[_jsonable(i), tf] for i, tf in plist] for t, plist in self.postings.items()},
        }
        payload = zlib.compress(json.dumps(body, ensure_ascii=False).encode("utf-8"))
        write_blob(path, BM25_MAGIC, BM25_VERSION, header, payload)

    @classmethod
    def load(cls, path) -> "Bm25Index":
        header, payload = read_blob(path, BM25_MAGIC, BM25_VERSION)
        try:
            body = json.loads(zlib.decompress(payload).decode("utf-8"))
        except (zlib.error, ValueError) as exc:
            raise DataError(f"{path}: corrupt index payload") from exc
        lengths = {_key(i): n for i, n in body["doc_lengths"]}
        postings = {t: [(_key(i), tf) for i, tf in plist] for t, plist in body["postings"].items()}
        return cls(
            postings=postings,
            doc_lengths=lengths,
            avg_doc_length=sum(lengths.values()) / len(lengths),
            item_count=len(lengths),
            k1=header["k1"],
            b=header["b"],
            analyzer=Analyzer(header["stopwords"], header["stem"]),
        )


def _jsonable(item_id):
    return list(item_id) if isinstance(item_id, tuple) else item_id


BM25_MAGIC = b"RRBM25\x00"
BM25_VERSION = 1


def build_index(items: Iterable[tuple[Hashable, str]], k1: float = 1.2, b: float = 0.75,
                analyzer: Analyzer | None = None) -> Bm25Index:
    """Index ``(id, text)`` pairs. Postings lists are sorted by item id."""
    if k1 < 0:
        raise ConfigError("k1 must be non-negative")
    if not 0.0 <= b <= 1.0:
        raise ConfigError("b must lie in [0, 1]")
    analyzer = analyzer or Analyzer()
    postings: dict[str, list[tuple[Hashable, int]]] = {}
    lengths: dict[Hashable, int] = {}
    for item_id, text in items:
        if item_id in lengths:
            raise DataError(f"duplicate item id {item_id!r}")
        terms = analyzer(text)
        lengths[item_id] = len(terms)
        for term, tf in Counter(terms).items():
            postings.setdefault(term, []).append((item_id, tf))
    if not lengths:
        raise DataError("cannot build a BM25 index from no items")
    for plist in postings.values():
        plist.sort(key=lambda p: p[0])
    return Bm25Index(
        postings=postings,
        doc_lengths=lengths,
        avg_doc_length=sum(lengths.values()) / len(lengths),
        item_count=len(lengths),
        k1=k1,
        b=b,
        analyzer=analyzer,
    )


def bm25_score(index: Bm25Index, query_terms: list[str], item_id) -> float:
    """BM25 of one item; repeated query terms contribute repeatedly."""
    if item_id not in index.doc_lengths:
        raise DataError(f"unknown item id {item_id!r}")
    norm = index._norm(item_id)
    total = 0.0
    for term in query_terms:
        tf = index.term_frequency(term, item_id)
        if tf:
            total += index.idf(term) * tf * (index.k1 + 1.0) / (tf + norm)
    return total


def score_all(index: Bm25Index, query_terms: list[str]) -> dict:
    """Scores for every item containing at least one query term."""
    scores: dict = {}
    for term in query_terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for item_id, tf in plist:
            gain = idf * tf * (index.k1 + 1.0) / (tf + index._norm(item_id))
            scores[item_id] = scores.get(item_id, 0.0) + gain
    return scores


def bm25_search(index: Bm25Index, query_text: str, k: int, pad: bool = False) -> ScoredList:
    """Top-k items by BM25, ties broken by ascending id.

    Only positively scored items are returned unless ``pad`` asks for
    zero-score items to fill up to ``k``.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    scores = {i: s for i, s in score_all(index, index.analyzer(query_text)).items() if s > 0}
    if pad and len(scores) < k:
        for item_id in sorted(index.doc_lengths):
            if len(scores) >= k:
                break
            scores.setdefault(item_id, 0.0)
    ranked = sorted(scores.items(), key=lambda p: (-p[1], p[0]))[:k]
    return ScoredList(ranked, "sparse")
