"""Embedding backends, cosine scoring and exhaustive vector search."""

from __future__ import annotations

import hashlib
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Hashable, Protocol, Sequence

import httpx
import numpy as np

from ._binfmt import write_blob, read_blob
from .errors import BackendError, ConfigError, DataError
from .fusion import ScoredList

logger = logging.getLogger(__name__)

NORM_TOL = 1e-6


class Embedder(Protocol):
    dimension: int

    def embed_batch(self, texts: Sequence[str], instruction: str | None = None) -> np.ndarray: ...


def with_instruction(text: str, instruction: str | None) -> str:
    if not instruction:
        return text
    return f"Instruct: {instruction}\nQuery: {text}"


def normalize(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if not np.all(np.isfinite(vec)):
        raise DataError("embedding contains non-finite values")
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise DataError("cannot normalize a zero vector")
    return vec / norm


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DataError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DataError("cosine of a zero vector is undefined")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def char_ngrams(text: str, n: int = 3) -> list[str]:
    if len(text) < n:
        return [text] if text else []
    return [text[i : i + n] for i in range(len(text) - n + 1)]


@lru_cache(maxsize=1 << 16)
def _hash_gram(gram: str, seed: int) -> int:
    h = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=seed.to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little")


def hashed_features(text: str, dim: int, seed: int = 0, n: int = 3) -> np.ndarray:
    """Signed feature hashing of character n-grams (unnormalized counts)."""
    out = np.zeros(dim, dtype=np.float64)
    for gram in char_ngrams(text, n):
        h = _hash_gram(gram, seed)
        out[(h >> 1) % dim] += 1.0 if h & 1 else -1.0
    return out


class HashingEmbedder:
    """Deterministic local embedder: hashed character 3-grams, L2-normalized.

    Texts whose grams cancel out exactly fall back to a fixed unit vector so
    every input still yields a valid embedding.
    """

    def __init__(self, dimension: int = 256, seed: int = 0):
        if dimension < 1:
            raise ConfigError("dimension must be >= 1")
        self.dimension = dimension
        self.seed = seed

    def embed(self, text: str, instruction: str | None = None) -> np.ndarray:
        if not text.strip():
            raise DataError("cannot embed empty text")
        feats = hashed_features(with_instruction(text, instruction), self.dimension, self.seed)
        norm = np.linalg.norm(feats)
        if norm == 0.0:
            feats = np.zeros(self.dimension)
            feats[0] = 1.0
            return feats
        return feats / norm

    def embed_batch(self, texts, instruction=None) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension))
        return np.vstack([self.embed(t, instruction) for t in texts])

    def descriptor(self) -> dict:
        return {"kind": "hash", "dimension": self.dimension, "seed": self.seed}


class RemoteEmbedder:
    """Client for an embeddings endpoint speaking
    ``{"model", "input": [...]}`` -> ``{"data": [{"index", "embedding"}]}``.

    Defaults come from ``RRPIPE_EMBED_URL``, ``RRPIPE_EMBED_API_KEY`` and
    ``RRPIPE_EMBED_MODEL``.
    """

    def __init__(
        self,
        url: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        dimension: int | None = None,
        batch_size: int = 32,
        max_workers: int = 4,
        timeout: float = 120.0,
        client: httpx.Client | None = None,
    ):
        self.url = url or os.environ.get("RRPIPE_EMBED_URL", "")
        self.model = model or os.environ.get("RRPIPE_EMBED_MODEL", "")
        self.api_key = api_key if api_key is not None else os.environ.get("RRPIPE_EMBED_API_KEY", "")
        if not self.url:
            raise ConfigError("embedding endpoint not configured (set RRPIPE_EMBED_URL)")
        self.dimension = dimension
        self.batch_size = batch_size
        self.max_workers = max_workers
        self._client = client or httpx.Client(timeout=timeout)

    def _post(self, texts: list[str]) -> np.ndarray:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self._client.post(self.url, json={"model": self.model, "input": texts}, headers=headers)
        except httpx.HTTPError as exc:
            raise BackendError(f"embedding service unavailable: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"embedding service returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = sorted(resp.json()["data"], key=lambda d: d["index"])
            mat = np.array([d["embedding"] for d in data], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed embedding response: {exc}") from exc
        if mat.ndim != 2 or mat.shape[0] != len(texts):
            raise BackendError(f"expected {len(texts)} embeddings, got shape {mat.shape}")
        return mat

    def embed_batch(self, texts, instruction=None) -> np.ndarray:
        texts = [with_instruction(t, instruction) for t in texts]
        if any(not t.strip() for t in texts):
            raise DataError("cannot embed empty text")
        if not texts:
            return np.zeros((0, self.dimension or 0))
        batches = [texts[i : i + self.batch_size] for i in range(0, len(texts), self.batch_size)]
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            mat = np.vstack(list(pool.map(self._post, batches)))
        if self.dimension is None:
            self.dimension = mat.shape[1]
        elif mat.shape[1] != self.dimension:
            raise DataError(f"embedding dimension {mat.shape[1]} does not match expected {self.dimension}")
        return np.vstack([normalize(row) for row in mat])

    def embed(self, text: str, instruction: str | None = None) -> np.ndarray:
        return self.embed_batch([text], instruction)[0]

    def descriptor(self) -> dict:
        return {"kind": "remote", "model": self.model, "dimension": self.dimension}


def embedder_from_descriptor(desc: dict):
    if desc.get("kind") == "hash":
        return HashingEmbedder(int(desc["dimension"]), int(desc.get("seed", 0)))
    if desc.get("kind") == "remote":
        return RemoteEmbedder(model=desc.get("model") or None, dimension=desc.get("dimension"))
    raise ConfigError(f"unknown embedder descriptor: {desc!r}")


@dataclass(frozen=True, eq=False)
class VectorIndex:
    ids: tuple[Hashable, ...]
    matrix: np.ndarray
    embedder: dict | None = None

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.ids):
            raise DataError("matrix rows must match ids")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate ids in vector index")
        if not np.all(np.isfinite(self.matrix)):
            raise DataError("vector index contains non-finite values")
        order = sorted(range(len(self.ids)), key=lambda i: self.ids[i])
        rank = np.empty(len(self.ids), dtype=np.int64)
        rank[order] = np.arange(len(self.ids))
        object.__setattr__(self, "_id_rank", rank)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    def __len__(self):
        return len(self.ids)

    @classmethod
    def build(cls, items, embedder, instruction: str | None = None) -> "VectorIndex":
        """Embed ``(id, text)`` pairs into a normalized index."""
        items = list(items)
        if not items:
            raise DataError("cannot build a vector index from no items")
        ids = tuple(i for i, _ in items)
        mat = np.asarray(embedder.embed_batch([t for _, t in items], instruction), dtype=np.float64)
        desc = embedder.descriptor() if hasattr(embedder, "descriptor") else None
        return cls.from_vectors(ids, mat, desc)

    @classmethod
    def from_vectors(cls, ids, vectors, embedder: dict | None = None) -> "VectorIndex":
        mat = np.asarray(vectors, dtype=np.float64)
        mat = np.vstack([normalize(row) for row in mat]) if len(mat) else mat
        return cls(tuple(ids), mat, embedder)

    def scores(self, query_vec) -> np.ndarray:
        q = np.asarray(query_vec, dtype=np.float64)
        if q.shape != (self.dimension,):
            raise DataError(f"query dimension {q.shape} does not match index dimension {self.dimension}")
        return np.clip(self.matrix @ normalize(q), -1.0, 1.0)

    def save(self, path) -> None:
        header = {
            "ids": [list(i) if isinstance(i, tuple) else i for i in self.ids],
            "dimension": self.dimension,
            "embedder": self.embedder,
        }
        write_blob(path, VECTOR_MAGIC, VECTOR_VERSION, header, self.matrix.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "VectorIndex":
        header, payload = read_blob(path, VECTOR_MAGIC, VECTOR_VERSION)
        ids = tuple(tuple(i) if isinstance(i, list) else i for i in header["ids"])
        mat = np.frombuffer(payload, dtype="<f8").reshape(len(ids), int(header["dimension"]))
        return cls(ids, mat.astype(np.float64), header.get("embedder"))


VECTOR_MAGIC = b"RRVEC\x00"
VECTOR_VERSION = 1


def dense_search(index: VectorIndex, query_vec, k: int) -> ScoredList:
    """Exhaustive cosine scan; top-k by score, ties by item id."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    if len(index) == 0:
        raise DataError("cannot search an empty index")
    scores = index.scores(query_vec)
    order = np.lexsort((index._id_rank, -scores))[:k]
    return ScoredList([(index.ids[i], float(scores[i])) for i in order], "dense")
