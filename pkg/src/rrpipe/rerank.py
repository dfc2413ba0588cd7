"""LLM reranking: pointwise helpfulness scores interpolated with retrieval
scores, sliding-window listwise ranking, and the combination of both."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .errors import ConfigError, DataError
from .fusion import UNIT_TOL, ScoredList, minmax_normalize
from .llm import CompletionClient, CompletionRequest
from .preprocess import truncate_tokens
from .prompts import load_prompt, render

logger = logging.getLogger(__name__)

_INT = re.compile(r"-?\d+")
_IDENT = re.compile(r"\[\s*(\d+)\s*\]")


@dataclass(frozen=True)
class RerankConfig:
    scale_max: int = 10
    w_rerank: float = 0.6
    w_retriever: float = 0.4
    listwise_pool: int = 100
    w_point: float = 0.5
    w_list: float = 0.5
    parse_retries: int = 1
    window_size: int = 20
    window_stride: int = 10
    passage_tokens: int = 512
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self):
        if self.scale_max < 1:
            raise ConfigError("scale_max must be >= 1")
        for a, b, names in (
            (self.w_rerank, self.w_retriever, "w_rerank + w_retriever"),
            (self.w_point, self.w_list, "w_point + w_list"),
        ):
            if min(a, b) < 0 or abs(a + b - 1.0) > 1e-9:
                raise ConfigError(f"{names} must be non-negative and sum to 1, got {a} + {b}")
        if self.listwise_pool < 1 or self.parse_retries < 0:
            raise ConfigError("listwise_pool must be >= 1 and parse_retries >= 0")
        if self.window_size < 2 or not 1 <= self.window_stride <= self.window_size:
            raise ConfigError("need window_size >= 2 and 1 <= window_stride <= window_size")


@dataclass(frozen=True)
class PointwiseJudgment:
    score: int
    warning: bool = False
    attempts: int = 1


def parse_first_integer(text: str) -> int | None:
    m = _INT.search(text)
    return int(m.group()) if m else None


def pointwise_prompt(query: str, doc_text: str, config: RerankConfig = RerankConfig(), prompt_dir=None) -> str:
    doc = truncate_tokens(doc_text, config.passage_tokens)
    return render(load_prompt("pointwise_v1", prompt_dir), query=query, doc=doc, scale_max=config.scale_max)


def pointwise_score(
    query: str,
    doc_text: str,
    llm: CompletionClient,
    config: RerankConfig = RerankConfig(),
    prompt_dir=None,
) -> PointwiseJudgment:
    """Ask for a 0..scale_max helpfulness score.

    The first integer in the reply is taken and clamped into range. If no
    integer appears after ``parse_retries`` re-asks the score is 0 and the
    judgment carries ``warning=True``.
    """
    if not doc_text.strip():
        raise DataError("cannot score an empty document")
    prompt = pointwise_prompt(query, doc_text, config, prompt_dir)
    attempts = 1 + config.parse_retries
    for attempt in range(1, attempts + 1):
        reply = llm.complete(CompletionRequest(prompt, config.temperature, config.max_output_tokens))
        value = parse_first_integer(reply)
        if value is not None:
            return PointwiseJudgment(min(max(value, 0), config.scale_max), False, attempt)
    logger.warning("no integer score in %d replies; recording 0", attempts)
    return PointwiseJudgment(0, True, attempts)


def pointwise_final(llm_score: int, retriever_score: float, config: RerankConfig = RerankConfig()) -> float:
    """``w_rerank * llm_score / scale_max + w_retriever * retriever_score``."""
    if retriever_score < -UNIT_TOL or retriever_score > 1 + UNIT_TOL:
        raise DataError(f"retriever score must be normalized to [0, 1], got {retriever_score}")
    if not 0 <= llm_score <= config.scale_max:
        raise DataError(f"llm score {llm_score} outside [0, {config.scale_max}]")
    return config.w_rerank * (llm_score / config.scale_max) + config.w_retriever * retriever_score


def _order_with_fallback(scores: Mapping, fallback: Mapping | None) -> list:
    fb = fallback or {}
    return sorted(scores, key=lambda i: (-scores[i], -fb.get(i, 0.0), i))


def pointwise_rerank(
    query: str,
    candidates: ScoredList,
    doc_text: Mapping[str, str] | Callable[[str], str],
    llm: CompletionClient,
    config: RerankConfig = RerankConfig(),
    workers: int = 1,
    prompt_dir=None,
) -> tuple[ScoredList, dict[str, PointwiseJudgment]]:
    """Score every candidate and interpolate with its (normalized) retrieval score."""
    lookup = doc_text.__getitem__ if isinstance(doc_text, Mapping) else doc_text
    ids = candidates.ids()

    def judge(item):
        return pointwise_score(query, lookup(item), llm, config, prompt_dir)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            judgments = dict(zip(ids, pool.map(judge, ids)))
    else:
        judgments = {i: judge(i) for i in ids}
    retrieval = candidates.as_dict()
    final = {i: pointwise_final(judgments[i].score, min(max(retrieval[i], 0.0), 1.0), config) for i in ids}
    order = _order_with_fallback(final, retrieval)
    return ScoredList([(i, final[i]) for i in order], "rerank_point"), judgments


def parse_ranking(reply: str, n: int) -> list[int]:
    """Zero-based positions named in a ``[i] > [j] > ...`` reply.

    Out-of-range identifiers are ignored and repeats keep their first mention.
    """
    seen: list[int] = []
    for m in _IDENT.finditer(reply):
        pos = int(m.group(1)) - 1
        if 0 <= pos < n and pos not in seen:
            seen.append(pos)
    return seen


def complete_permutation(mentioned: Sequence[int], n: int) -> list[int]:
    missing = [i for i in range(n) if i not in set(mentioned)]
    return list(mentioned) + missing


def listwise_prompt(query: str, passages: Sequence[str], config: RerankConfig = RerankConfig(), prompt_dir=None) -> str:
    body = "\n\n".join(
        f"[{i}] {truncate_tokens(text, config.passage_tokens)}" for i, text in enumerate(passages, start=1)
    )
    return render(load_prompt("listwise_v1", prompt_dir), num=len(passages), query=query, passages=body)


def _rank_window(query, ids, lookup, llm, config, prompt_dir) -> tuple[list, bool]:
    prompt = listwise_prompt(query, [lookup(i) for i in ids], config, prompt_dir)
    for _ in range(1 + config.parse_retries):
        reply = llm.complete(CompletionRequest(prompt, config.temperature, config.max_output_tokens))
        mentioned = parse_ranking(reply, len(ids))
        if mentioned:
            return [ids[p] for p in complete_permutation(mentioned, len(ids))], False
    logger.warning("unparsable listwise reply for a window of %d; keeping input order", len(ids))
    return list(ids), True


def listwise_rank(
    query: str,
    candidates: ScoredList | Sequence,
    doc_text: Mapping[str, str] | Callable[[str], str],
    llm: CompletionClient,
    config: RerankConfig = RerankConfig(),
    prompt_dir=None,
) -> list:
    """Return a permutation of the candidate ids ordered by the model.

    Pools larger than ``window_size`` are ranked with overlapping windows
    moving from the bottom of the list to the top by ``window_stride``.
    """
    ids = candidates.ids() if isinstance(candidates, ScoredList) else list(candidates)
    if not 1 <= len(ids) <= config.listwise_pool:
        raise DataError(f"listwise pool must hold 1..{config.listwise_pool} candidates, got {len(ids)}")
    if len(ids) == 1:
        return ids
    lookup = doc_text.__getitem__ if isinstance(doc_text, Mapping) else doc_text
    order = list(ids)
    end = len(order)
    while True:
        start = max(0, end - config.window_size)
        order[start:end], _ = _rank_window(query, order[start:end], lookup, llm, config, prompt_dir)
        if start == 0:
            break
        end -= config.window_stride
    return order


def listwise_scores(order: Sequence) -> ScoredList:
    """Rank r of N maps to (N - r + 1) / N."""
    n = len(order)
    return ScoredList([(item, (n - r + 1) / n) for r, item in enumerate(order, start=1)], "rerank_list")


def combine_point_list(
    point: ScoredList,
    list_order: Sequence,
    config: RerankConfig = RerankConfig(),
    retrieval: ScoredList | Mapping | None = None,
) -> ScoredList:
    """``w_point * minmax(point) + w_list * listwise score``.

    Ties go to the higher retrieval score, then the smaller id.
    """
    if set(point.ids()) != set(list_order) or len(list_order) != len(point):
        raise DataError("pointwise and listwise rankings cover different ids")
    normalized = minmax_normalize(point).as_dict()
    listed = listwise_scores(list_order).as_dict()
    final = {i: config.w_point * normalized[i] + config.w_list * listed[i] for i in normalized}
    fallback = retrieval.as_dict() if isinstance(retrieval, ScoredList) else retrieval
    order = _order_with_fallback(final, fallback)
    return ScoredList([(i, final[i]) for i in order], "final")
