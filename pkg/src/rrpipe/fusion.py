"""Ranked score lists, min-max normalization, chunk aggregation and hybrid fusion."""

from __future__ import annotations

import math
from typing import Hashable, Iterable, Iterator

from .errors import ConfigError, DataError

PROVENANCES = ("sparse", "dense", "hybrid", "rerank_point", "rerank_list", "final")
UNIT_TOL = 1e-9


class ScoredList:
    """An immutable ranked list of ``(item_id, score)`` pairs.

    Item ids are unique and scores finite and non-increasing. Use
    :meth:`ranked` to build one from unordered pairs (ties go to the smaller
    id); the plain constructor accepts an already ordered sequence so callers
    can apply their own tie-break.
    """

    __slots__ = ("_entries", "provenance", "_index")

    def __init__(self, entries: Iterable[tuple[Hashable, float]], provenance: str):
        if provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {provenance!r}")
        entries = tuple((item, float(score)) for item, score in entries)
        index = {}
        prev = math.inf
        for pos, (item, score) in enumerate(entries):
            if not math.isfinite(score):
                raise DataError(f"non-finite score for {item!r}")
            if item in index:
                raise DataError(f"duplicate item id {item!r} in scored list")
            if score > prev:
                raise DataError("scored list entries must be sorted by score descending")
            index[item] = pos
            prev = score
        self._entries = entries
        self._index = index
        self.provenance = provenance

    @classmethod
    def ranked(cls, pairs, provenance: str) -> "ScoredList":
        if isinstance(pairs, dict):
            pairs = pairs.items()
        return cls(sorted(pairs, key=lambda p: (-p[1], p[0])), provenance)

    @property
    def entries(self) -> tuple[tuple[Hashable, float], ...]:
        return self._entries

    def ids(self) -> list:
        return [item for item, _ in self._entries]

    def scores(self) -> list[float]:
        return [score for _, score in self._entries]

    def as_dict(self) -> dict:
        return dict(self._entries)

    def score_of(self, item, default: float | None = None) -> float | None:
        pos = self._index.get(item)
        return default if pos is None else self._entries[pos][1]

    def rank_of(self, item) -> int | None:
        pos = self._index.get(item)
        return None if pos is None else pos + 1

    def top(self, k: int) -> "ScoredList":
        return ScoredList(self._entries[:k], self.provenance)

    def with_provenance(self, provenance: str) -> "ScoredList":
        return ScoredList(self._entries, provenance)

    def __contains__(self, item) -> bool:
        return item in self._index

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[tuple[Hashable, float]]:
        return iter(self._entries)

    def __getitem__(self, i):
        return self._entries[i]

    def __eq__(self, other):
        if not isinstance(other, ScoredList):
            return NotImplemented
        return self._entries == other._entries and self.provenance == other.provenance

    def __repr__(self):
        head = ", ".join(f"{i!r}: {s:.4g}" for i, s in self._entries[:5])
        more = ", ..." if len(self) > 5 else ""
        return f"ScoredList<{self.provenance}>[{head}{more}]"


def minmax_normalize(scored: ScoredList) -> ScoredList:
    """Map scores to [0, 1] by (s - min) / (max - min); a constant list maps to 0.5."""
    if not len(scored):
        raise DataError("cannot normalize an empty scored list")
    values = scored.scores()
    hi, lo = values[0], values[-1]
    if hi == lo:
        return ScoredList(((i, 0.5) for i, _ in scored), scored.provenance)
    span = hi - lo
    return ScoredList(((i, (s - lo) / span) for i, s in scored), scored.provenance)


def max_over_chunks(chunk_scores: ScoredList | Iterable) -> ScoredList:
    """Collapse ``((doc_id, chunk_index), score)`` entries to one score per doc_id."""
    provenance = chunk_scores.provenance if isinstance(chunk_scores, ScoredList) else "dense"
    best: dict[str, float] = {}
    for key, score in chunk_scores:
        doc_id = key[0] if isinstance(key, tuple) else key
        if doc_id not in best or score > best[doc_id]:
            best[doc_id] = score
    return ScoredList.ranked(best, provenance)


def _check_unit(scored: ScoredList, name: str) -> None:
    for item, s in scored:
        if s < -UNIT_TOL or s > 1 + UNIT_TOL:
            raise DataError(f"{name} list is not normalized: {item!r} has score {s}")


def hybrid_fuse(dense: ScoredList, sparse: ScoredList, w_dense: float = 0.5) -> ScoredList:
    """Weighted sum of two normalized lists over the union of their ids.

    An id missing from one side contributes 0 from that side.
    """
    if not 0.0 <= w_dense <= 1.0:
        raise ConfigError(f"w_dense must lie in [0, 1], got {w_dense}")
    _check_unit(dense, "dense")
    _check_unit(sparse, "sparse")
    d, s = dense.as_dict(), sparse.as_dict()
    w_sparse = 1.0 - w_dense
    fused = {i: w_dense * d.get(i, 0.0) + w_sparse * s.get(i, 0.0) for i in d.keys() | s.keys()}
    return ScoredList.ranked(fused, "hybrid")
