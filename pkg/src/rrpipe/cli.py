"""Command-line entry point: ``rrpipe <subcommand> ...``.

Every subcommand accepts ``--config FILE`` and repeated ``--set section.key=value``
overrides; stage parameters come from the resulting :class:`PipelineConfig`.
Subcommand flags such as ``--max-tokens`` or ``--rounds`` are shorthands for
config keys. Exit codes: 0 ok, 2 config error, 3 backend error, 4 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus as corpus_mod
from .corpus import Document, Query
from .dense import VectorIndex, embedder_from_descriptor
from .errors import BackendError, ConfigError, DataError, PipelineError
from .evaluation import evaluate_run, format_table, read_trec, run_from_lists, write_report, write_trec
from .expansion import run_expansion
from .fusion import ScoredList, minmax_normalize
from .pipeline import PipelineConfig, StageError, make_embedder, make_llm, prepare_chunks, rerank_query, run_pipeline
from .preprocess import clean_text
from .retrieval import DenseRetriever, HybridRetriever, SparseRetriever
from .sparse import Analyzer, Bm25Index, build_index

logger = logging.getLogger("rrpipe")

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_DATA = 0, 2, 3, 4

# Subcommand flag -> config key it overrides.
_FLAG_KEYS = {
    "max_tokens": "preprocess.max_chunk_tokens",
    "threshold": "preprocess.similarity_threshold",
    "overlap": "preprocess.overlap_fraction",
    "rounds": "expand.rounds",
    "topk": "expand.top_k",
    "rerank_mode": "ranking.rerank_mode",
    "prompt_dir": "paths.prompt_dir",
    "llm": "llm.backend",
    "cassette": "llm.cassette",
}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, BackendError):
        return EXIT_BACKEND
    if isinstance(exc, DataError):
        return EXIT_DATA
    return 1


def _config(args, require_paths: bool = False) -> PipelineConfig:
    overrides = list(args.set or ())
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    cfg = PipelineConfig.load(args.config, overrides)
    cfg.validate(require_paths=require_paths)
    return cfg


def _texts(path) -> dict[str, str]:
    if corpus_mod.is_chunk_file(path):
        docs = corpus_mod.documents_from_chunks(corpus_mod.load_chunks(path))
    else:
        docs = corpus_mod.load_corpus(path)
    return {d.id: d.text for d in docs}


def _open_retrievers(index_dir, cfg: PipelineConfig):
    index_dir = Path(index_dir)
    sparse_index = Bm25Index.load(index_dir / "sparse.idx")
    vec_index = VectorIndex.load(index_dir / "dense.idx")
    embedder = embedder_from_descriptor(vec_index.embedder) if vec_index.embedder else make_embedder(cfg.dense)
    pool = cfg.ranking.pool_size
    sparse_r = SparseRetriever(sparse_index, pool)
    dense_r = DenseRetriever(vec_index, embedder, cfg.dense.query_instruction, pool)
    return {"sparse": sparse_r, "dense": dense_r, "hybrid": HybridRetriever(dense_r, sparse_r, cfg.ranking.w_dense, pool)}


def _queries(args) -> list[Query]:
    if getattr(args, "query", None):
        return [Query("q0", args.query)]
    if not args.queries:
        raise ConfigError("give --queries FILE or --query TEXT")
    return corpus_mod.load_queries(args.queries)


def cmd_clean(args) -> None:
    docs = corpus_mod.load_corpus(args.input)
    n = corpus_mod.dump_corpus(args.output, (Document(d.id, clean_text(d.text)) for d in docs))
    print(f"cleaned {n} documents -> {args.output}")


def cmd_chunk(args) -> None:
    cfg = _config(args)
    docs = corpus_mod.load_corpus(args.input)
    chunks = prepare_chunks(docs, cfg.preprocess, make_embedder(cfg.dense))
    corpus_mod.dump_chunks(args.output, chunks)
    print(f"{len(chunks)} chunks from {len(docs)} documents -> {args.output}")


def cmd_index(args) -> None:
    cfg = _config(args)
    if corpus_mod.is_chunk_file(args.input):
        items = [(c.key, c.text) for c in corpus_mod.load_chunks(args.input)]
    else:
        items = [((d.id, 0), d.text) for d in corpus_mod.load_corpus(args.input)]
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    analyzer = Analyzer(cfg.sparse.stopwords, cfg.sparse.stem)
    build_index(items, cfg.sparse.k1, cfg.sparse.b, analyzer).save(out / "sparse.idx")
    VectorIndex.build(items, make_embedder(cfg.dense), cfg.dense.doc_instruction or None).save(out / "dense.idx")
    print(f"indexed {len(items)} items -> {out / 'sparse.idx'}, {out / 'dense.idx'}")


def cmd_search(args) -> None:
    cfg = _config(args)
    retriever = _open_retrievers(args.index, cfg)[args.mode]
    run = run_from_lists({q.id: retriever.search(q.text, args.k) for q in _queries(args)})
    if args.output:
        write_trec(args.output, run, args.mode)
        print(f"wrote {len(run)} rankings -> {args.output}")
        return
    for qid in sorted(run):
        for rank, (doc_id, score) in enumerate(run[qid], start=1):
            print(f"{qid} Q0 {doc_id} {rank} {score:.10f} {args.mode}")


def cmd_expand(args) -> None:
    cfg = _config(args)
    retriever = _open_retrievers(args.index, cfg)[cfg.ranking.expand_retriever]
    texts = _texts(args.corpus)
    llm = make_llm(cfg, Path(args.output).parent)
    records = []
    for q in _queries(args):
        state = run_expansion(q, retriever, llm, cfg.expand, texts, prompt_dir=cfg.paths.prompt_dir or None)
        records.append({"id": q.id, "original": q.text, "expanded": state.expanded_query})
    corpus_mod.write_jsonl(args.output, records)
    print(f"expanded {len(records)} queries -> {args.output}")


def cmd_rerank(args) -> None:
    cfg = _config(args)
    run = read_trec(args.run)
    texts = _texts(args.corpus)
    llm = make_llm(cfg, Path(args.output).parent)
    out = {}
    for q in _queries(args):
        entries = run.get(q.id, [])[: cfg.ranking.rerank_depth]
        candidates = ScoredList.ranked(entries, "hybrid")
        # Pointwise interpolation expects retrieval scores in [0, 1].
        if len(candidates) and (min(candidates.scores()) < 0 or max(candidates.scores()) > 1):
            candidates = minmax_normalize(candidates)
        out[q.id] = rerank_query(q, candidates, texts, llm, cfg)
    write_trec(args.output, run_from_lists(out), "rerank")
    print(f"reranked {len(out)} queries -> {args.output}")


def cmd_eval(args) -> None:
    judgments = corpus_mod.load_judgments(args.judgments)
    reports = {}
    for item in args.run:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        if name in reports:
            raise ConfigError(f"duplicate run name {name!r}")
        reports[name] = evaluate_run(read_trec(path), judgments, args.k)
    if args.out_dir:
        write_report(args.out_dir, reports, figures=not args.no_figures)
    print(format_table(reports), end="")


def demo_examples():
    """Four hand-written (query, positive, negative) triples for a quick demo run."""
    from .training import TrainingExample

    topics = [
        ("how do plants turn sunlight into sugar", "photosynthesis converts light energy into glucose in chloroplasts",
         "the stock market closed higher after strong earnings reports"),
        ("why does ice float on water", "solid water is less dense than liquid water because of hydrogen bonding",
         "the recipe calls for two cups of flour and one egg"),
        ("sort a list in python", "use the sorted builtin or list.sort with an optional key function",
         "the migration of birds follows seasonal patterns across continents"),
        ("what causes ocean tides", "the gravitational pull of the moon and sun raises tidal bulges",
         "a sonnet has fourteen lines with a fixed rhyme scheme"),
    ]
    return [TrainingExample(q, p, (n,)) for q, p, n in topics]


def cmd_train_toy(args) -> None:
    from .training import TrainingExample, separation_margin, train_toy

    if args.data:
        examples = [TrainingExample.from_record(r) for _, r in corpus_mod.iter_jsonl(args.data)]
    else:
        examples = demo_examples()
    if not examples:
        raise DataError("no training examples")
    result = train_toy(examples, epochs=args.epochs, lr=args.lr, seed=args.seed,
                       embed_dim=args.dim, feature_dim=args.feature_dim, temperature=args.temperature)
    summary = {
        "examples": len(examples),
        "epochs": args.epochs,
        "initial_loss": result.loss_trace[0],
        "final_loss": result.loss_trace[-1],
        "margin": separation_margin(result.embedder, examples),
    }
    if args.out_dir:
        from .plotting import plot_loss_trace

        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "loss_trace.tsv").write_text(
            "epoch\tloss\n" + "".join(f"{i}\t{v:.10f}\n" for i, v in enumerate(result.loss_trace)), encoding="utf-8")
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        plot_loss_trace(result.loss_trace, out / "loss_trace.png")
    print(json.dumps(summary, sort_keys=True))


def cmd_curate(args) -> None:
    from .training import annotate_pair, curate_pairs, examples_from_curated, generate_example

    if not args.pairs and not args.queries:
        raise ConfigError("give --pairs FILE and/or --queries FILE")
    cfg = _config(args)
    llm = make_llm(cfg, Path(args.output).parent)
    prompt_dir = cfg.paths.prompt_dir or None
    examples = []
    if args.pairs:
        annotated = []
        for lineno, rec in corpus_mod.iter_jsonl(args.pairs):
            if "query" not in rec or "doc" not in rec:
                raise DataError(f"{args.pairs}:{lineno}: pair records need 'query' and 'doc'")
            pair = annotate_pair(rec["query"], rec["doc"], llm, prompt_dir=prompt_dir)
            if pair is not None:
                annotated.append(pair)
        positives, negatives, dropped = curate_pairs(annotated)
        examples.extend(examples_from_curated(positives, negatives))
        print(f"annotated {len(annotated)} pairs: {len(positives)} positive, "
              f"{len(negatives)} negative, {len(dropped)} dropped")
    if args.queries:
        for q in corpus_mod.load_queries(args.queries):
            examples.extend(generate_example(q.text, llm, args.min_chars, prompt_dir))
    n = corpus_mod.write_jsonl(args.output, (e.to_record() for e in examples))
    print(f"wrote {n} training examples -> {args.output}")


def cmd_run(args) -> None:
    cfg = _config(args, require_paths=True)
    result = run_pipeline(cfg, run_dir=args.run_dir, figures=not args.no_figures)
    print((result.run_dir / "report.txt").read_text(encoding="utf-8"), end="")
    print(f"artifacts in {result.run_dir}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="config override (repeatable)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    backend = argparse.ArgumentParser(add_help=False)
    backend.add_argument("--llm", choices=("mock", "remote", "replay"), help="completion backend")
    backend.add_argument("--cassette", help="record/replay cassette (JSONL)")
    backend.add_argument("--prompt-dir", help="directory overriding the packaged prompt files")

    parser = argparse.ArgumentParser(prog="rrpipe", description="Retrieval pipeline for reasoning-heavy queries.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help, parents=(common,)):
        p = sub.add_parser(name, parents=list(parents), help=help)
        p.set_defaults(func=func)
        return p

    p = add("clean", cmd_clean, "normalize document text")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)

    p = add("chunk", cmd_chunk, "split documents into semantic chunks")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--overlap", type=float)

    p = add("index", cmd_index, "build sparse and dense indexes")
    p.add_argument("--in", dest="input", required=True, help="corpus or chunk JSONL")
    p.add_argument("--out", dest="output", required=True, help="index directory")

    p = add("search", cmd_search, "retrieve documents")
    p.add_argument("--index", required=True, help="index directory")
    p.add_argument("--queries")
    p.add_argument("--query")
    p.add_argument("--mode", choices=("sparse", "dense", "hybrid"), default="hybrid")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", dest="output", help="TREC run file (default: stdout)")

    p = add("expand", cmd_expand, "iterative query expansion", (common, backend))
    p.add_argument("--index", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--queries")
    p.add_argument("--query")
    p.add_argument("--rounds", type=int)
    p.add_argument("--topk", type=int)
    p.add_argument("--out", dest="output", required=True)

    p = add("rerank", cmd_rerank, "rerank a run file", (common, backend))
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--mode", dest="rerank_mode", choices=("point", "list", "both", "none"))
    p.add_argument("--out", dest="output", required=True)

    p = add("eval", cmd_eval, "score run files with nDCG@k")
    p.add_argument("--run", action="append", required=True, metavar="[NAME=]PATH")
    p.add_argument("--judgments", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out-dir")
    p.add_argument("--no-figures", action="store_true")

    p = add("train-toy", cmd_train_toy, "contrastive training of the toy embedder")
    p.add_argument("--data", help="JSONL of {query, positive, negatives}; default: built-in demo set")
    p.add_argument("--dim", type=int, default=32, help="embedding dimension")
    p.add_argument("--feature-dim", type=int, default=256)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--out-dir")

    p = add("curate", cmd_curate, "annotate or generate training data", (common, backend))
    p.add_argument("--pairs", help="JSONL of {query, doc} to annotate")
    p.add_argument("--queries", help="queries to generate positives and hard negatives for")
    p.add_argument("--min-chars", type=int, default=300)
    p.add_argument("--out", dest="output", required=True)

    p = add("run", cmd_run, "end-to-end pipeline", (common, backend))
    p.add_argument("--run-dir")
    p.add_argument("--no-figures", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except PipelineError as exc:
        print(f"rrpipe: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
