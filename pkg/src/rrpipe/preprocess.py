"""Rule-based document cleaning and semantic-aware chunking."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import Chunk, Document
from .errors import ConfigError, DataError

TokenCounter = Callable[[str], int]

_HSPACE = re.compile(r"[ \t]+")
# Lines ending in one of these are considered complete and are never merged.
_LINE_TERMINALS = frozenset(".!?:;\"')]}”’»")
_SENTENCE_END = re.compile(r"[.!?](?=\s|$)")


def clean_text(text: str) -> str:
    """Normalize a scraped document.

    * spaces/tabs collapse to one space, trailing whitespace is dropped;
    * a line break inside a sentence (previous line lacks terminal
      punctuation and the next line starts lowercase or with a digit)
      becomes a single space;
    * runs of two or more blank lines collapse to one.

    The function is idempotent.
    """
    if not text:
        return ""
    lines = [_HSPACE.sub(" ", ln).rstrip() for ln in text.replace("\r\n", "\n").split("\n")]

    merged: list[str] = []
    for line in lines:
        if merged and merged[-1] and line:
            head = line.lstrip()
            if _continues(merged[-1], head):
                merged[-1] = merged[-1] + " " + head
                continue
        merged.append(line)

    out: list[str] = []
    blank_run = 0
    for line in merged:
        if line:
            blank_run = 0
        else:
            blank_run += 1
            if blank_run > 1:
                continue
        out.append(line)
    return "\n".join(out)


def _continues(prev: str, head: str) -> bool:
    if not head or prev[-1] in _LINE_TERMINALS:
        return False
    first = head[0]
    return first.islower() or first.isdigit()


def count_tokens(text: str) -> int:
    """Default token counter: whitespace-delimited words."""
    return len(text.split())


def truncate_tokens(text: str, max_tokens: int) -> str:
    """Keep the first ``max_tokens`` whitespace tokens, preserving layout."""
    if max_tokens <= 0:
        return ""
    for i, m in enumerate(re.finditer(r"\S+", text), start=1):
        if i == max_tokens:
            return text[: m.end()]
    return text


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Return ``(start, end)`` character spans of the sentences of ``text``.

    A sentence ends at ``.``, ``!`` or ``?`` followed by whitespace or the end
    of the text. Abbreviations are not special-cased.
    """
    spans = []
    start = 0
    for m in _SENTENCE_END.finditer(text):
        end = m.end()
        if text[start:end].strip():
            spans.append(_trim_span(text, start, end))
        start = end
    if text[start:].strip():
        spans.append(_trim_span(text, start, len(text)))
    return spans


def _trim_span(text: str, start: int, end: int) -> tuple[int, int]:
    while text[start].isspace():
        start += 1
    while text[end - 1].isspace():
        end -= 1
    return start, end


@dataclass(frozen=True)
class ChunkParams:
    max_chunk_tokens: int = 4096
    similarity_threshold: float = 0.5
    overlap_fraction: float = 0.20
    min_sentences_per_chunk: int = 1

    def __post_init__(self):
        if self.max_chunk_tokens < 1:
            raise ConfigError("max_chunk_tokens must be >= 1")
        if not -1.0 <= self.similarity_threshold <= 1.0:
            raise ConfigError("similarity_threshold must lie in [-1, 1]")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ConfigError("overlap_fraction must lie in [0, 1)")
        if self.min_sentences_per_chunk < 1:
            raise ConfigError("min_sentences_per_chunk must be >= 1")


def _cos_to_mean(vec: np.ndarray, total: np.ndarray) -> float:
    norm = float(np.linalg.norm(total)) * float(np.linalg.norm(vec))
    if norm == 0.0:
        return 0.0
    return max(-1.0, min(1.0, float(vec @ total) / norm))


def _segment(
    text: str,
    spans: Sequence[tuple[int, int]],
    vectors: np.ndarray,
    params: ChunkParams,
    counter: TokenCounter,
) -> list[tuple[int, int, int]]:
    """Greedy grouping of sentence spans into ``(start, end, tokens)`` segments."""
    segments = []
    cur_start = cur_end = None
    cur_tokens = 0
    cur_count = 0
    cur_sum = None
    for (s, e), vec in zip(spans, vectors):
        n_tok = counter(text[s:e])
        if n_tok > params.max_chunk_tokens:
            # An oversized sentence cannot fit any chunk; flush and hard-split it.
            if cur_start is not None:
                segments.append((cur_start, cur_end, cur_tokens))
                cur_start = None
            segments.extend(_hard_split(text, s, e, params.max_chunk_tokens, counter))
            continue
        if cur_start is not None:
            joins = (
                cur_count < params.min_sentences_per_chunk
                or _cos_to_mean(vec, cur_sum) >= params.similarity_threshold
            ) and cur_tokens + n_tok <= params.max_chunk_tokens
            if joins:
                cur_end = e
                cur_tokens += n_tok
                cur_count += 1
                cur_sum = cur_sum + vec
                continue
            segments.append((cur_start, cur_end, cur_tokens))
        cur_start, cur_end, cur_tokens, cur_count = s, e, n_tok, 1
        cur_sum = np.array(vec, dtype=float)
    if cur_start is not None:
        segments.append((cur_start, cur_end, cur_tokens))
    return segments


def _hard_split(text, start, end, max_tokens, counter):
    words = list(re.finditer(r"\S+", text[start:end]))
    out = []
    for i in range(0, len(words), max_tokens):
        group = words[i : i + max_tokens]
        s = start + group[0].start()
        e = start + group[-1].end()
        out.append((s, e, counter(text[s:e])))
    return out


def overlap_prefix(previous: str, fraction: float) -> str:
    """Trailing ``fraction`` of ``previous`` by characters, widened back to
    the whitespace preceding the cut so no word is split."""
    if fraction <= 0 or not previous:
        return ""
    n = int(round(len(previous) * fraction))
    if n <= 0:
        return ""
    cut = len(previous) - n
    if cut > 0 and not previous[cut - 1].isspace():
        ws = max(previous.rfind(c, 0, cut) for c in (" ", "\n", "\t"))
        if ws < 0:
            return ""
        cut = ws + 1
    return previous[cut:].strip()


def chunk_document(
    doc: Document,
    embedder,
    params: ChunkParams = ChunkParams(),
    counter: TokenCounter = count_tokens,
) -> list[Chunk]:
    """Split a cleaned document into semantically cohesive chunks.

    A sentence joins the open chunk when its cosine similarity to the mean
    embedding of the chunk's sentences reaches ``similarity_threshold`` and
    the token budget allows it. Each chunk after the first is then prefixed
    with the tail of the previous chunk (``overlap_fraction`` of its
    characters); the prefix is not counted against the budget.

    ``embedder`` must provide ``embed_batch(list[str]) -> ndarray``.
    """
    if not doc.text.strip():
        raise DataError(f"document {doc.id!r} has empty text")
    text = doc.text
    spans = split_sentences(text)
    vectors = np.asarray(embedder.embed_batch([text[s:e] for s, e in spans]), dtype=float)
    if vectors.shape[0] != len(spans):
        raise DataError(f"embedder returned {vectors.shape[0]} vectors for {len(spans)} sentences")

    chunks: list[Chunk] = []
    prev_core = None
    for idx, (s, e, n_tok) in enumerate(_segment(text, spans, vectors, params, counter)):
        core = text[s:e]
        prefix = overlap_prefix(prev_core, params.overlap_fraction) if prev_core else ""
        if prefix:
            chunks.append(Chunk(doc.id, idx, prefix + " " + core, n_tok, len(prefix) + 1))
        else:
            chunks.append(Chunk(doc.id, idx, core, n_tok))
        prev_core = core
    return chunks


def chunk_corpus(docs, embedder, params: ChunkParams = ChunkParams(), counter: TokenCounter = count_tokens):
    out: list[Chunk] = []
    for doc in docs:
        out.extend(chunk_document(doc, embedder, params, counter))
    return out
