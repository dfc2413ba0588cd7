"""Iterative query expansion with retrieval in the loop.

Each round retrieves the best passages not seen in earlier rounds, asks the
completion model to write (round 1) or refine (later rounds) an answering
passage, and keeps only the latest passage. The final query is the original
text followed by the last expansion.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

from .corpus import Query
from .errors import BackendError, ConfigError
from .fusion import ScoredList
from .llm import CompletionClient, CompletionRequest
from .preprocess import count_tokens, truncate_tokens
from .prompts import load_prompt, render

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExpansionConfig:
    rounds: int = 2
    top_k: int = 5
    doc_truncate_tokens: int = 512
    temperature: float = 0.7
    separator: str = "\n"
    max_output_tokens: int = 2048

    def __post_init__(self):
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.doc_truncate_tokens < 1:
            raise ConfigError("doc_truncate_tokens must be >= 1")


@dataclass
class ExpansionState:
    original_query: str
    separator: str = "\n"
    round: int = 0
    last_expansion: str | None = None
    seen_doc_ids: set = field(default_factory=set)
    retrieved: list[list] = field(default_factory=list)

    @property
    def search_text(self) -> str:
        if self.last_expansion is None:
            return self.original_query
        return self.original_query + self.separator + self.last_expansion

    @property
    def expanded_query(self) -> str:
        return self.search_text


class ExpansionError(BackendError):
    """Raised when the completion backend fails mid-expansion; carries the partial state."""

    def __init__(self, message: str, state: ExpansionState):
        super().__init__(message)
        self.state = state


class Retriever(Protocol):
    def search(self, text: str, k: int) -> ScoredList: ...


def format_passages(docs: Sequence[tuple[str, str]]) -> str:
    return "\n\n".join(f"[{i}] {text}" for i, (_, text) in enumerate(docs, start=1))


def build_expansion_prompt(
    round: int,
    query: str,
    docs: Sequence[tuple[str, str]],
    prior: str | None = None,
    prompt_dir=None,
) -> str:
    if round < 1:
        raise ConfigError("expansion rounds are numbered from 1")
    if round == 1:
        if prior is not None:
            raise ConfigError("the first round takes no prior expansion")
        return render(load_prompt("expand_first", prompt_dir), query=query, passages=format_passages(docs))
    if prior is None:
        raise ConfigError(f"round {round} requires the prior round's expansion")
    return render(
        load_prompt("expand_next", prompt_dir),
        query=query,
        passages=format_passages(docs),
        prior=prior,
    )


def _fresh_ids(retriever: Retriever, text: str, k: int, seen: set) -> list:
    ranked = retriever.search(text, k + len(seen))
    fresh = [i for i in ranked.ids() if i not in seen]
    return fresh[:k]


def run_expansion(
    query: Query | str,
    retriever: Retriever,
    llm: CompletionClient,
    config: ExpansionConfig,
    doc_text: Mapping[str, str] | Callable[[str], str],
    counter=count_tokens,
    prompt_dir=None,
) -> ExpansionState:
    text = query.text if isinstance(query, Query) else query
    lookup = doc_text.__getitem__ if isinstance(doc_text, Mapping) else doc_text
    state = ExpansionState(text, config.separator)
    for rnd in range(1, config.rounds + 1):
        ids = _fresh_ids(retriever, state.search_text, config.top_k, state.seen_doc_ids)
        docs = [(i, _truncate(lookup(i), config.doc_truncate_tokens, counter)) for i in ids]
        prompt = build_expansion_prompt(rnd, text, docs, state.last_expansion, prompt_dir)
        state.round = rnd
        state.retrieved.append(ids)
        state.seen_doc_ids.update(ids)
        try:
            out = llm.complete(CompletionRequest(prompt, config.temperature, config.max_output_tokens))
        except BackendError as exc:
            raise ExpansionError(f"expansion round {rnd} failed: {exc}", state) from exc
        state.last_expansion = out.strip()
        logger.debug("round %d: %d passages, expansion of %d chars", rnd, len(ids), len(out))
    return state


def _truncate(text: str, max_tokens: int, counter) -> str:
    if counter is count_tokens:
        return truncate_tokens(text, max_tokens)
    if counter(text) <= max_tokens:
        return text
    # Generic counter: binary search the longest word prefix that fits.
    words = text.split()
    lo, hi = 0, len(words)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if counter(" ".join(words[:mid])) <= max_tokens:
            lo = mid
        else:
            hi = mid - 1
    return " ".join(words[:lo])


def expand_query(
    query: Query | str,
    retriever: Retriever,
    llm: CompletionClient,
    config: ExpansionConfig = ExpansionConfig(),
    doc_text: Mapping[str, str] | Callable[[str], str] | None = None,
    **kwargs,
) -> str:
    """Return ``original + separator + final-round expansion``.

    With ``rounds = 0`` the original query is returned and no backend is called.
    """
    if doc_text is None:
        raise ConfigError("doc_text lookup is required")
    return run_expansion(query, retriever, llm, config, doc_text, **kwargs).expanded_query
