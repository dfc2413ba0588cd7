"""Document-level retrievers over chunk-level indexes.

Indexes are keyed by ``(doc_id, chunk_index)``; every retriever aggregates
chunk scores to documents with max-over-chunks before ranking.
"""

from __future__ import annotations

from .dense import VectorIndex, dense_search
from .fusion import ScoredList, hybrid_fuse, max_over_chunks, minmax_normalize
from .sparse import Bm25Index, bm25_search


def _to_docs(scored: ScoredList, k: int) -> ScoredList:
    return max_over_chunks(scored).top(k)


class SparseRetriever:
    def __init__(self, index: Bm25Index, pool_size: int = 2000):
        self.index = index
        self.pool_size = pool_size

    def search(self, text: str, k: int) -> ScoredList:
        return _to_docs(bm25_search(self.index, text, max(k, self.pool_size)), k)


class DenseRetriever:
    def __init__(self, index: VectorIndex, embedder, instruction: str | None = None, pool_size: int = 2000):
        self.index = index
        self.embedder = embedder
        self.instruction = instruction or None
        self.pool_size = pool_size

    def search(self, text: str, k: int) -> ScoredList:
        vec = self.embedder.embed_batch([text], self.instruction)[0]
        return _to_docs(dense_search(self.index, vec, max(k, self.pool_size)), k)


class HybridRetriever:
    """``w_dense * dense + (1 - w_dense) * sparse`` over min-max normalized
    top-``pool_size`` candidate lists."""

    def __init__(self, dense: DenseRetriever, sparse: SparseRetriever, w_dense: float = 0.5, pool_size: int = 2000):
        self.dense = dense
        self.sparse = sparse
        self.w_dense = w_dense
        self.pool_size = pool_size

    def search(self, text: str, k: int) -> ScoredList:
        pool = max(k, self.pool_size)
        d = self.dense.search(text, pool)
        s = self.sparse.search(text, pool)
        d = minmax_normalize(d) if len(d) else d
        s = minmax_normalize(s) if len(s) else s
        return hybrid_fuse(d, s, self.w_dense).top(k)
