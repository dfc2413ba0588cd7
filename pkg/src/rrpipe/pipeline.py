"""End-to-end pipeline: clean -> chunk -> index -> expand -> hybrid retrieve ->
rerank -> evaluate, with every intermediate artifact written to a run directory.

Configuration is an INI file (one section per stage) with ``section.key=value``
overrides.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import corpus as corpus_mod
from .corpus import Chunk, Document, Query
from .dense import HashingEmbedder, RemoteEmbedder, VectorIndex
from .errors import ConfigError, PipelineError
from .evaluation import EvalReport, evaluate_run, run_from_lists, write_report, write_trec
from .expansion import ExpansionConfig, run_expansion
from .fusion import ScoredList
from .llm import ChatCompletionsClient, CompletionClient, RecordingClient, ReplayClient
from .offline import offline_llm
from .preprocess import ChunkParams, chunk_document, clean_text
from .rerank import RerankConfig, combine_point_list, listwise_rank, listwise_scores, pointwise_rerank
from .retrieval import DenseRetriever, HybridRetriever, SparseRetriever
from .sparse import Analyzer, build_index

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PathsConfig:
    corpus: str = ""
    queries: str = ""
    judgments: str = ""
    run_dir: str = "runs/latest"
    prompt_dir: str = ""


@dataclass(frozen=True)
class PreprocessConfig:
    clean: bool = True
    chunk: bool = True
    max_chunk_tokens: int = 4096
    similarity_threshold: float = 0.5
    overlap_fraction: float = 0.20
    min_sentences_per_chunk: int = 1

    def chunk_params(self) -> ChunkParams:
        return ChunkParams(self.max_chunk_tokens, self.similarity_threshold,
                           self.overlap_fraction, self.min_sentences_per_chunk)


@dataclass(frozen=True)
class SparseConfig:
    k1: float = 1.2
    b: float = 0.75
    stopwords: bool = False
    stem: bool = False


@dataclass(frozen=True)
class DenseConfig:
    backend: str = "hash"
    dimension: int = 256
    seed: int = 0
    model: str = ""
    query_instruction: str = ""
    doc_instruction: str = ""


@dataclass(frozen=True)
class RankingConfig:
    w_dense: float = 0.5
    pool_size: int = 2000
    expand_retriever: str = "dense"
    rerank_depth: int = 100
    rerank_mode: str = "both"


@dataclass(frozen=True)
class LlmConfig:
    backend: str = "mock"
    cassette: str = ""
    record: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    k: int = 10


SECTIONS: dict[str, type] = {
    "paths": PathsConfig,
    "preprocess": PreprocessConfig,
    "sparse": SparseConfig,
    "dense": DenseConfig,
    "ranking": RankingConfig,
    "expand": ExpansionConfig,
    "rerank": RerankConfig,
    "llm": LlmConfig,
    "run": RunConfig,
}

_CHOICES = {
    ("dense", "backend"): ("hash", "remote"),
    ("ranking", "expand_retriever"): ("dense", "sparse", "hybrid"),
    ("ranking", "rerank_mode"): ("point", "list", "both", "none"),
    ("llm", "backend"): ("mock", "remote", "replay"),
}


@dataclass(frozen=True)
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    sparse: SparseConfig = field(default_factory=SparseConfig)
    dense: DenseConfig = field(default_factory=DenseConfig)
    ranking: RankingConfig = field(default_factory=RankingConfig)
    expand: ExpansionConfig = field(default_factory=ExpansionConfig)
    rerank: RerankConfig = field(default_factory=RerankConfig)
    llm: LlmConfig = field(default_factory=LlmConfig)
    run: RunConfig = field(default_factory=RunConfig)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Mapping[str, Any]]) -> "PipelineConfig":
        unknown = set(data) - SECTIONS.keys()
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        parts = {}
        for name, klass in SECTIONS.items():
            values = dict(data.get(name, {}))
            defaults = {f.name: f for f in dataclasses.fields(klass)}
            bad = set(values) - defaults.keys()
            if bad:
                raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(bad))}")
            kwargs = {}
            for key, raw in values.items():
                kwargs[key] = _coerce(raw, _default_of(defaults[key]), f"{name}.{key}")
                allowed = _CHOICES.get((name, key))
                if allowed and kwargs[key] not in allowed:
                    raise ConfigError(f"{name}.{key} must be one of {allowed}, got {kwargs[key]!r}")
            parts[name] = klass(**kwargs)
        return cls(**parts)

    @classmethod
    def load(cls, path=None, overrides: Sequence[str] = ()) -> "PipelineConfig":
        data: dict[str, dict[str, str]] = {}
        if path:
            parser = configparser.ConfigParser(interpolation=None)
            parser.optionxform = str
            if not parser.read(path, encoding="utf-8"):
                raise ConfigError(f"cannot read config file {path}")
            data = {s: dict(parser[s]) for s in parser.sections()}
        for item in overrides:
            key, sep, value = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot:
                raise ConfigError(f"override must look like section.key=value, got {item!r}")
            data.setdefault(section, {})[name] = value.strip()
        return cls.from_mapping(data)

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for name in SECTIONS:
            parser[name] = {k: _render(v) for k, v in dataclasses.asdict(getattr(self, name)).items()}
        from io import StringIO

        buf = StringIO()
        parser.write(buf)
        return buf.getvalue()

    def validate(self, require_paths: bool = True) -> None:
        if require_paths:
            for key in ("corpus", "queries"):
                value = getattr(self.paths, key)
                if not value:
                    raise ConfigError(f"paths.{key} is required")
                if not Path(value).exists():
                    raise ConfigError(f"paths.{key} does not exist: {value}")
            if self.paths.judgments and not Path(self.paths.judgments).exists():
                raise ConfigError(f"paths.judgments does not exist: {self.paths.judgments}")
        if not 0.0 <= self.ranking.w_dense <= 1.0:
            raise ConfigError("ranking.w_dense must lie in [0, 1]")
        if self.ranking.rerank_depth > self.rerank.listwise_pool and self.ranking.rerank_mode in ("list", "both"):
            raise ConfigError("ranking.rerank_depth exceeds rerank.listwise_pool")
        if self.paths.prompt_dir and not Path(self.paths.prompt_dir).is_dir():
            raise ConfigError(f"paths.prompt_dir is not a directory: {self.paths.prompt_dir}")
        if self.llm.backend == "replay" and not self.llm.cassette:
            raise ConfigError("llm.cassette is required for the replay backend")


def _default_of(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()  # type: ignore[misc]


def _coerce(raw, default, name: str):
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    # Escapes let separators such as a newline live in a one-line INI value.
    return raw.encode("utf-8").decode("unicode_escape") if "\\" in raw else raw


def _render(value) -> str:
    if isinstance(value, str):
        return value.encode("unicode_escape").decode("ascii")
    return str(value)


class StageError(PipelineError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineResult:
    run_dir: Path
    final: dict
    reports: dict[str, EvalReport]
    expanded: dict[str, str]


def make_embedder(cfg: DenseConfig):
    if cfg.backend == "hash":
        return HashingEmbedder(cfg.dimension, cfg.seed)
    return RemoteEmbedder(model=cfg.model or None)


def make_llm(cfg: PipelineConfig, run_dir: Path) -> CompletionClient:
    if cfg.llm.backend == "mock":
        client: CompletionClient = offline_llm(cfg.rerank.scale_max)
    elif cfg.llm.backend == "replay":
        client = ReplayClient(cfg.llm.cassette)
    else:
        client = ChatCompletionsClient()
    if cfg.llm.record:
        client = RecordingClient(client, cfg.llm.cassette or run_dir / "cassette.jsonl")
    return client


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        logger.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def prepare_chunks(docs: Sequence[Document], cfg: PreprocessConfig, embedder) -> list[Chunk]:
    if not cfg.chunk:
        return [Chunk(d.id, 0, d.text, len(d.text.split())) for d in docs if d.text.strip()]
    params = cfg.chunk_params()
    out: list[Chunk] = []
    for d in docs:
        if d.text.strip():
            out.extend(chunk_document(d, embedder, params))
    return out


def rerank_query(query: Query, candidates: ScoredList, texts: Mapping[str, str], llm, cfg: PipelineConfig) -> ScoredList:
    mode = cfg.ranking.rerank_mode
    prompt_dir = cfg.paths.prompt_dir or None
    if mode == "none" or not len(candidates):
        return candidates.with_provenance("final")
    if mode == "list":
        order = listwise_rank(query.text, candidates, texts, llm, cfg.rerank, prompt_dir)
        return listwise_scores(order).with_provenance("final")
    point, _ = pointwise_rerank(query.text, candidates, texts, llm, cfg.rerank, prompt_dir=prompt_dir)
    if mode == "point":
        return point.with_provenance("final")
    order = listwise_rank(query.text, point, texts, llm, cfg.rerank, prompt_dir)
    return combine_point_list(point, order, cfg.rerank, retrieval=candidates)


def run_pipeline(
    cfg: PipelineConfig,
    llm: CompletionClient | None = None,
    embedder=None,
    run_dir: str | Path | None = None,
    figures: bool = True,
) -> PipelineResult:
    """Execute every stage and persist artifacts under the run directory.

    ``llm`` and ``embedder`` override the configured backends (tests inject
    scripted doubles this way).
    """
    cfg.validate()
    out = Path(run_dir or cfg.paths.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    random.seed(cfg.run.seed)

    with _Stage("load"):
        docs = corpus_mod.load_corpus(cfg.paths.corpus)
        queries = corpus_mod.load_queries(cfg.paths.queries)
        judgments = corpus_mod.load_judgments(cfg.paths.judgments or cfg.paths.queries)
    with _Stage("clean"):
        if cfg.preprocess.clean:
            docs = [Document(d.id, clean_text(d.text)) for d in docs]
        corpus_mod.dump_corpus(out / "cleaned.jsonl", docs)
        texts = {d.id: d.text for d in docs}
    with _Stage("chunk"):
        embedder = embedder or make_embedder(cfg.dense)
        chunks = prepare_chunks(docs, cfg.preprocess, embedder)
        corpus_mod.dump_chunks(out / "chunks.jsonl", chunks)
    with _Stage("index"):
        analyzer = Analyzer(cfg.sparse.stopwords, cfg.sparse.stem)
        sparse_index = build_index([(c.key, c.text) for c in chunks], cfg.sparse.k1, cfg.sparse.b, analyzer)
        sparse_index.save(out / "sparse.idx")
        vec_index = VectorIndex.build([(c.key, c.text) for c in chunks], embedder, cfg.dense.doc_instruction or None)
        vec_index.save(out / "dense.idx")
        pool = cfg.ranking.pool_size
        sparse_r = SparseRetriever(sparse_index, pool)
        dense_r = DenseRetriever(vec_index, embedder, cfg.dense.query_instruction, pool)
        hybrid_r = HybridRetriever(dense_r, sparse_r, cfg.ranking.w_dense, pool)
        expand_r = {"dense": dense_r, "sparse": sparse_r, "hybrid": hybrid_r}[cfg.ranking.expand_retriever]
    with _Stage("baseline"):
        bm25_run = run_from_lists({q.id: sparse_r.search(q.text, 1000) for q in queries})
        write_trec(out / "bm25.trec", bm25_run, "bm25")

    llm = llm or make_llm(cfg, out)

    def expand_one(q: Query) -> str:
        return run_expansion(q, expand_r, llm, cfg.expand, texts, prompt_dir=cfg.paths.prompt_dir or None).expanded_query

    with _Stage("expand"):
        expanded_texts = _map(expand_one, queries, cfg.run.workers)
        expanded = {q.id: t for q, t in zip(queries, expanded_texts)}
        corpus_mod.write_jsonl(out / "expanded.jsonl",
                               ({"id": q.id, "original": q.text, "expanded": expanded[q.id]} for q in queries))
    with _Stage("retrieve"):
        hybrid = {q.id: hybrid_r.search(expanded[q.id], pool) for q in queries}
        write_trec(out / "hybrid.trec", run_from_lists(hybrid), "hybrid")

    def rerank_one(q: Query) -> ScoredList:
        return rerank_query(q, hybrid[q.id].top(cfg.ranking.rerank_depth), texts, llm, cfg)

    with _Stage("rerank"):
        reranked = dict(zip((q.id for q in queries), _map(rerank_one, queries, cfg.run.workers)))
        final_run = run_from_lists(reranked)
        write_trec(out / "final.trec", final_run, "final")
    with _Stage("evaluate"):
        k = cfg.run.k
        reports = {
            "bm25": evaluate_run(bm25_run, judgments, k),
            "hybrid": evaluate_run(run_from_lists(hybrid), judgments, k),
            "final": evaluate_run(final_run, judgments, k),
        }
        write_report(out, reports, figures=figures)
    logger.info("run complete: %s", json.dumps({n: round(r.macro, 4) for n, r in reports.items()}))
    return PipelineResult(out, final_run, reports, expanded)


def _map(fn, items, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]
