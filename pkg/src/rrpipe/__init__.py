"""rrpipe: retrieval for reasoning-heavy queries.

Stages: text cleaning and semantic chunking, BM25 and dense indexes, hybrid
fusion, iterative LLM query expansion, pointwise/listwise LLM reranking,
toy contrastive training, and nDCG@k evaluation.
"""

from .corpus import Chunk, Document, FieldMap, Judgments, Query
from .dense import HashingEmbedder, RemoteEmbedder, VectorIndex, cosine, dense_search
from .errors import BackendError, ConfigError, DataError, PipelineError
from .evaluation import EvalReport, evaluate_run, ndcg_at_k, read_trec, write_trec
from .expansion import ExpansionConfig, expand_query, run_expansion
from .fusion import ScoredList, hybrid_fuse, max_over_chunks, minmax_normalize
from .llm import ChatCompletionsClient, CompletionRequest, MockLLM, RecordingClient, ReplayClient
from .pipeline import PipelineConfig, run_pipeline
from .preprocess import ChunkParams, chunk_document, clean_text, split_sentences
from .rerank import RerankConfig, combine_point_list, listwise_rank, pointwise_final, pointwise_rerank
from .sparse import Analyzer, Bm25Index, bm25_search, build_index
from .training import TrainingExample, infonce_loss, train_toy

__version__ = "0.1.0"

__all__ = [
    "Analyzer", "BackendError", "Bm25Index", "ChatCompletionsClient", "Chunk", "ChunkParams",
    "CompletionRequest", "ConfigError", "DataError", "Document", "EvalReport", "ExpansionConfig",
    "FieldMap", "HashingEmbedder", "Judgments", "MockLLM", "PipelineConfig", "PipelineError",
    "Query", "RecordingClient", "RemoteEmbedder", "ReplayClient", "RerankConfig", "ScoredList",
    "TrainingExample", "VectorIndex", "bm25_search", "build_index", "chunk_document", "clean_text",
    "combine_point_list", "cosine", "dense_search", "evaluate_run", "expand_query", "hybrid_fuse",
    "infonce_loss", "listwise_rank", "max_over_chunks", "minmax_normalize", "ndcg_at_k",
    "pointwise_final", "pointwise_rerank", "read_trec", "run_expansion", "run_pipeline",
    "split_sentences", "train_toy", "write_trec",
]
