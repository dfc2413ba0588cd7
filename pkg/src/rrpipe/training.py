"""InfoNCE with curated hard negatives on a toy linear embedder, plus the
LLM-driven curation of training pairs.

The toy embedder stands in for a decoder whose end-of-sequence hidden state
is the text embedding: ``embed(x) = normalize(features(x) @ W)`` with
hashed character 3-gram features. Gradients are analytic, differentiated
through the cosine and the L2 normalization.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dense import hashed_features
from .errors import ConfigError, DataError, PipelineError
from .llm import CompletionClient, CompletionRequest
from .prompts import load_prompt, render

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingExample:
    query: str
    positive: str
    negatives: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.positive:
            raise DataError("training example needs a non-empty positive")
        object.__setattr__(self, "negatives", tuple(self.negatives))

    def to_record(self) -> dict:
        return {"query": self.query, "positive": self.positive, "negatives": list(self.negatives)}

    @classmethod
    def from_record(cls, rec: dict) -> "TrainingExample":
        try:
            return cls(rec["query"], rec["positive"], tuple(rec.get("negatives") or ()))
        except KeyError as exc:
            raise DataError(f"training record missing field {exc}") from exc


def _logsumexp(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + math.log(float(np.sum(np.exp(x - m))))


def infonce_loss(s_pos: float, s_negs: Sequence[float], temperature: float = 1.0) -> float:
    """``-log(exp(s+) / (exp(s+) + sum exp(s-)))`` evaluated via log-sum-exp.

    ``temperature`` divides every similarity; 1.0 leaves them raw.
    """
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    logits = np.asarray([s_pos, *s_negs], dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise DataError("similarities must be finite")
    if len(logits) == 1:
        return 0.0
    logits = logits / temperature
    return max(0.0, _logsumexp(logits) - logits[0])


@dataclass
class ToyEmbedder:
    weights: np.ndarray
    seed: int = 0

    @classmethod
    def random(cls, feature_dim: int, embed_dim: int, seed: int = 0, scale: float = 0.1) -> "ToyEmbedder":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, scale, size=(feature_dim, embed_dim)), seed)

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.weights.shape[1]

    def features(self, text: str) -> np.ndarray:
        return hashed_features(text, self.feature_dim, self.seed)

    def project(self, text: str) -> tuple[np.ndarray, np.ndarray, float]:
        f = self.features(text)
        z = f @ self.weights
        norm = float(np.linalg.norm(z))
        if norm == 0.0 or not math.isfinite(norm):
            raise DataError(f"degenerate (zero-norm) embedding for text {text!r}")
        return f, z, norm

    def embed(self, text: str) -> np.ndarray:
        _, z, norm = self.project(text)
        return z / norm

    def embed_batch(self, texts, instruction=None) -> np.ndarray:
        return np.vstack([self.embed(t) for t in texts])

    def similarity(self, a: str, b: str) -> float:
        return float(self.embed(a) @ self.embed(b))


def loss_and_grad(example: TrainingExample, embedder: ToyEmbedder, temperature: float = 1.0) -> tuple[float, np.ndarray]:
    """InfoNCE loss of one example and its gradient with respect to the weights."""
    texts = [example.query, example.positive, *example.negatives]
    projected = [embedder.project(t) for t in texts]
    e = np.vstack([z / n for _, z, n in projected])
    eq, docs = e[0], e[1:]
    sims = docs @ eq
    loss = infonce_loss(float(sims[0]), sims[1:].tolist(), temperature)
    grad = np.zeros_like(embedder.weights)
    if len(sims) == 1:
        return loss, grad

    logits = sims / temperature
    p = np.exp(logits - logits.max())
    p /= p.sum()
    dl_ds = p / temperature
    dl_ds[0] -= 1.0 / temperature

    grad_e = np.zeros_like(e)
    grad_e[0] = dl_ds @ docs
    grad_e[1:] = dl_ds[:, None] * eq[None, :]
    for (f, _, norm), ei, gi in zip(projected, e, grad_e):
        gz = (gi - ei * (ei @ gi)) / norm
        grad += np.outer(f, gz)
    return loss, grad


class TrainingDiverged(PipelineError):
    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = trace


@dataclass
class TrainingResult:
    embedder: ToyEmbedder
    loss_trace: list[float] = field(default_factory=list)


def mean_loss_and_grad(examples, embedder, temperature=1.0) -> tuple[float, np.ndarray]:
    total, grad = 0.0, np.zeros_like(embedder.weights)
    for ex in examples:
        loss, g = loss_and_grad(ex, embedder, temperature)
        total += loss
        grad += g
    return total / len(examples), grad / len(examples)


def train_toy(
    examples: Sequence[TrainingExample],
    epochs: int = 200,
    lr: float = 0.1,
    seed: int = 0,
    embed_dim: int = 32,
    feature_dim: int = 256,
    temperature: float = 1.0,
    init: ToyEmbedder | None = None,
) -> TrainingResult:
    """Full-batch gradient descent on the mean InfoNCE loss.

    ``loss_trace[i]`` is the mean loss before update ``i``; the final entry
    is the loss of the returned weights.
    """
    if not examples:
        raise DataError("no training examples")
    emb = init or ToyEmbedder.random(feature_dim, embed_dim, seed)
    emb = ToyEmbedder(emb.weights.copy(), emb.seed)
    trace: list[float] = []
    for epoch in range(epochs):
        loss, grad = mean_loss_and_grad(examples, emb, temperature)
        trace.append(loss)
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainingDiverged(f"loss became non-finite at epoch {epoch}", trace)
        emb.weights -= lr * grad
    final, _ = mean_loss_and_grad(examples, emb, temperature)
    if not math.isfinite(final):
        raise TrainingDiverged("loss became non-finite after the last update", trace)
    trace.append(final)
    return TrainingResult(emb, trace)


def separation_margin(embedder: ToyEmbedder, examples: Iterable[TrainingExample]) -> float:
    """Mean of ``s(q, d+) - max s(q, d-)`` over examples that have negatives."""
    margins = []
    for ex in examples:
        if not ex.negatives:
            continue
        q = embedder.embed(ex.query)
        pos = float(embedder.embed(ex.positive) @ q)
        neg = max(float(embedder.embed(n) @ q) for n in ex.negatives)
        margins.append(pos - neg)
    if not margins:
        raise DataError("no examples with negatives")
    return float(np.mean(margins))


# --- curation -----------------------------------------------------------------

POSITIVE_MIN_SCORE = 7  # scores strictly above 6
NEGATIVE_MAX_SCORE = 3  # scores strictly below 4


@dataclass(frozen=True)
class AnnotatedPair:
    query: str
    doc: str
    score: int
    reason: str = ""

    def __post_init__(self):
        if not isinstance(self.score, int) or not 0 <= self.score <= 10:
            raise DataError(f"annotation score must be an integer in [0, 10], got {self.score!r}")


def curate_pairs(pairs: Iterable[AnnotatedPair]):
    """Split annotated pairs into ``(positives, negatives, dropped)``.

    Scores above 6 are positives, below 4 negatives; 4..6 are dropped.
    """
    positives, negatives, dropped = [], [], []
    for pair in pairs:
        if not 0 <= pair.score <= 10:
            raise DataError(f"score {pair.score} out of range")
        if pair.score >= POSITIVE_MIN_SCORE:
            positives.append(pair)
        elif pair.score <= NEGATIVE_MAX_SCORE:
            negatives.append(pair)
        else:
            dropped.append(pair)
    return positives, negatives, dropped


def examples_from_curated(positives, negatives) -> list[TrainingExample]:
    """One example per positive; its negatives are the curated negatives of the same query."""
    by_query: dict[str, list[str]] = {}
    for pair in negatives:
        by_query.setdefault(pair.query, []).append(pair.doc)
    return [TrainingExample(p.query, p.doc, tuple(by_query.get(p.query, ()))) for p in positives]


_PROMPT_NAMES = {"annotate": "annotate", "positive_gen": "positive_gen", "hard_negative_gen": "hard_negative_gen"}


def build_curation_prompts(kind: str, prompt_dir=None, **inputs) -> str:
    """Render one of the data-curation prompts.

    ``annotate`` needs ``query`` and ``doc``; ``positive_gen`` needs ``query``;
    ``hard_negative_gen`` needs ``query`` and ``positive`` and accepts
    ``language`` and ``min_chars``.
    """
    if kind not in _PROMPT_NAMES:
        raise ConfigError(f"unknown curation prompt kind {kind!r}")
    if kind == "hard_negative_gen":
        inputs.setdefault("language", "the same language as the input")
        inputs.setdefault("min_chars", 300)
    return render(load_prompt(_PROMPT_NAMES[kind], prompt_dir), **inputs)


def _json_object(text: str) -> dict:
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        raise DataError("no JSON object in reply")
    try:
        obj = json.loads(text[start : end + 1])
    except ValueError as exc:
        raise DataError(f"invalid JSON in reply: {exc}") from exc
    if not isinstance(obj, dict):
        raise DataError("reply JSON is not an object")
    return obj


def parse_annotation(reply: str, query: str, doc: str) -> AnnotatedPair:
    obj = _json_object(reply)
    if "score" not in obj:
        raise DataError("annotation reply lacks a score")
    try:
        score = int(round(float(obj["score"])))
    except (TypeError, ValueError) as exc:
        raise DataError(f"non-numeric score {obj['score']!r}") from exc
    return AnnotatedPair(query, doc, score, str(obj.get("reason", "")))


def annotate_pair(query: str, doc: str, llm: CompletionClient, retries: int = 1, prompt_dir=None) -> AnnotatedPair | None:
    """Score a pair with the annotation prompt; unparsable replies are retried, then dropped."""
    prompt = build_curation_prompts("annotate", prompt_dir, query=query, doc=doc)
    for _ in range(1 + retries):
        reply = llm.complete(CompletionRequest(prompt))
        try:
            return parse_annotation(reply, query, doc)
        except DataError as exc:
            logger.warning("annotation reply rejected: %s", exc)
    return None


_GENERATED_DOC = re.compile(r"Document\s*\d+\s*:\s*")


def parse_generated_positives(reply: str, limit: int = 3) -> list[str]:
    """Extract ``Document i: {"title", "content"}`` entries as ``title\\ncontent`` texts."""
    docs = []
    for part in _GENERATED_DOC.split(reply)[1:]:
        try:
            obj = _json_object(part)
        except DataError:
            continue
        title, content = str(obj.get("title", "")).strip(), str(obj.get("content", "")).strip()
        if content:
            docs.append(f"{title}\n{content}" if title else content)
    return docs[:limit]


def parse_hard_negative(reply: str, min_chars: int = 300) -> str:
    obj = _json_object(reply)
    text = obj.get("hard negative document") or obj.get("hard_negative_document")
    if not isinstance(text, str):
        raise DataError("reply lacks a 'hard negative document' string")
    if len(text.strip()) < min_chars:
        raise DataError(f"hard negative shorter than {min_chars} characters")
    return text.strip()


def generate_example(query: str, llm: CompletionClient, min_chars: int = 300, prompt_dir=None) -> list[TrainingExample]:
    """Generate positives for ``query`` and one hard negative per positive."""
    pos_reply = llm.complete(CompletionRequest(build_curation_prompts("positive_gen", prompt_dir, query=query)))
    out = []
    for positive in parse_generated_positives(pos_reply):
        prompt = build_curation_prompts("hard_negative_gen", prompt_dir, query=query, positive=positive, min_chars=min_chars)
        try:
            negative = parse_hard_negative(llm.complete(CompletionRequest(prompt)), min_chars)
        except DataError as exc:
            logger.warning("hard negative rejected for %r: %s", query[:40], exc)
            continue
        out.append(TrainingExample(query, positive, (negative,)))
    return out
