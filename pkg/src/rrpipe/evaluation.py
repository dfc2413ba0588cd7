"""nDCG@k with binary gains, TREC run files, and evaluation reports."""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Judgments
from .errors import DataError
from .fusion import ScoredList

logger = logging.getLogger(__name__)

RunFile = dict  # query_id -> list[(doc_id, score)], best first


def ndcg_at_k(ranking: Sequence[str], gold: Iterable[str], excluded: Iterable[str] = (), k: int = 10) -> float:
    """Binary-gain nDCG@k after dropping excluded ids from the ranking."""
    if k < 1:
        raise ValueError("k must be >= 1")
    excluded = set(excluded)
    gold = set(gold) - excluded
    if not gold:
        raise DataError("gold set is empty after removing excluded ids")
    kept = [d for d in ranking if d not in excluded][:k]
    dcg = sum(1.0 / math.log2(i + 2) for i, d in enumerate(kept) if d in gold)
    idcg = sum(1.0 / math.log2(i + 2) for i in range(min(k, len(gold))))
    return dcg / idcg


def run_from_lists(lists: Mapping[str, ScoredList | Sequence]) -> RunFile:
    out = {}
    for qid, scored in lists.items():
        entries = scored.entries if isinstance(scored, ScoredList) else scored
        out[qid] = [(str(d), float(s)) for d, s in entries]
    return out


def write_trec(path, run: RunFile, tag: str = "rrpipe") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for qid in sorted(run):
            for rank, (doc_id, score) in enumerate(run[qid], start=1):
                fh.write(f"{qid} Q0 {doc_id} {rank} {score:.10f} {tag}\n")


def read_trec(path) -> RunFile:
    """Parse ``qid Q0 docid rank score tag`` lines; per query, best first."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such run file: {path}")
    rows: dict[str, list[tuple[float, int, str]]] = defaultdict(list)
    seen: dict[str, set] = defaultdict(set)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise DataError(f"{path}:{lineno}: expected 6 columns, got {len(parts)}")
            qid, _, doc_id, rank, score, _ = parts
            try:
                rank_i, score_f = int(rank), float(score)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad rank/score") from exc
            if doc_id in seen[qid]:
                raise DataError(f"{path}:{lineno}: duplicate doc {doc_id!r} for query {qid!r}")
            seen[qid].add(doc_id)
            rows[qid].append((score_f, rank_i, doc_id))
    return {
        qid: [(d, s) for s, _, d in sorted(entries, key=lambda r: (-r[0], r[1]))]
        for qid, entries in rows.items()
    }


@dataclass
class EvalReport:
    k: int
    per_query: dict[str, float]
    per_dataset: dict[str, float]
    mean: float
    macro: float
    missing: list[str] = field(default_factory=list)
    dataset_of: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "metric": f"ndcg@{self.k}",
            "mean": self.mean,
            "macro": self.macro,
            "per_dataset": self.per_dataset,
            "per_query": self.per_query,
            "missing_queries": self.missing,
        }


def evaluate_run(run: RunFile, judgments: Judgments, k: int = 10, default_dataset: str = "all") -> EvalReport:
    """Score every judged query. Queries absent from the run score 0 (with a warning)."""
    per_query: dict[str, float] = {}
    missing = []
    for qid in sorted(judgments.gold):
        ranking = [d for d, _ in run.get(qid, [])]
        if len(set(ranking)) != len(ranking):
            raise DataError(f"duplicate doc ids in ranking for query {qid!r}")
        if qid not in run:
            missing.append(qid)
            per_query[qid] = 0.0
            continue
        per_query[qid] = ndcg_at_k(ranking, judgments.gold[qid], judgments.excluded_for(qid), k)
    if missing:
        logger.warning("%d judged quer%s missing from run, scored 0: %s",
                       len(missing), "y" if len(missing) == 1 else "ies", ", ".join(missing[:10]))
    dataset_of = {q: judgments.dataset.get(q, default_dataset) for q in per_query}
    groups: dict[str, list[float]] = defaultdict(list)
    for q, v in per_query.items():
        groups[dataset_of[q]].append(v)
    per_dataset = {d: sum(v) / len(v) for d, v in sorted(groups.items())}
    mean = sum(per_query.values()) / len(per_query) if per_query else 0.0
    macro = sum(per_dataset.values()) / len(per_dataset) if per_dataset else 0.0
    return EvalReport(k, per_query, per_dataset, mean, macro, missing, dataset_of)


def format_table(reports: Mapping[str, EvalReport]) -> str:
    """Aligned text table: one row per system, one column per dataset plus Avg."""
    datasets = sorted({d for r in reports.values() for d in r.per_dataset})
    k = next(iter(reports.values())).k if reports else 10
    header = [f"nDCG@{k}", "Avg."] + datasets
    rows = [[name, f"{100 * r.macro:.1f}"] + [f"{100 * r.per_dataset.get(d, float('nan')):.1f}" for d in datasets]
            for name, r in reports.items()]
    widths = [max(len(str(row[i])) for row in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
             for row in [header] + rows]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def write_per_query_tsv(path, reports: Mapping[str, EvalReport]) -> None:
    names = list(reports)
    qids = sorted({q for r in reports.values() for q in r.per_query})
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("\t".join(["query_id", "dataset"] + names) + "\n")
        for q in qids:
            ds = next((r.dataset_of.get(q) for r in reports.values() if q in r.dataset_of), "")
            cells = [f"{reports[n].per_query.get(q, float('nan')):.6f}" for n in names]
            fh.write("\t".join([q, ds] + cells) + "\n")


def write_report(out_dir, reports: Mapping[str, EvalReport], figures: bool = True) -> dict[str, Path]:
    """Write ``report.txt``, ``report.json``, ``per_query.tsv`` and (optionally) figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"table": out / "report.txt", "json": out / "report.json", "tsv": out / "per_query.tsv"}
    paths["table"].write_text(format_table(reports), encoding="utf-8")
    paths["json"].write_text(json.dumps({n: r.to_json() for n, r in reports.items()}, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    write_per_query_tsv(paths["tsv"], reports)
    if figures:
        from .plotting import plot_dataset_scores, plot_per_query

        paths["fig_datasets"] = plot_dataset_scores(reports, out / "ndcg_by_dataset.png")
        paths["fig_queries"] = plot_per_query(reports, out / "ndcg_per_query.png")
    return paths
