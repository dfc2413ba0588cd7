"""Acceptance criteria 1-8.

Each test carries ``@pytest.mark.criterion(n, title)``; conftest prints one
PASS/FAIL line per criterion at the end of the session.
"""

import math
import random
import string
import time

import numpy as np
import pytest
from toy_data import GoldAwareResponder, make_vocab, toy_corpus, write_toy_files

from rrpipe.corpus import Document
from rrpipe.dense import HashingEmbedder
from rrpipe.evaluation import ndcg_at_k
from rrpipe.expansion import ExpansionConfig, build_expansion_prompt, run_expansion
from rrpipe.fusion import ScoredList, hybrid_fuse, max_over_chunks, minmax_normalize
from rrpipe.llm import MockLLM
from rrpipe.pipeline import PipelineConfig, run_pipeline
from rrpipe.preprocess import ChunkParams, chunk_document, clean_text, count_tokens
from rrpipe.rerank import RerankConfig, combine_point_list, complete_permutation, parse_ranking, pointwise_final
from rrpipe.sparse import bm25_search, build_index
from rrpipe.training import TrainingExample, ToyEmbedder, infonce_loss, loss_and_grad

GOLDEN = __import__("pathlib").Path(__file__).parent / "golden"


def report(n: int, ok: bool, detail: str = "") -> None:
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}{' - ' + detail if detail else ''}")


# --- 1. BM25 oracle equivalence ------------------------------------------------------

def brute_bm25(docs: dict, query: list, k1=1.2, b=0.75):
    """Direct evaluation of the Okapi formula, no index structures."""
    tokens = {d: t.split() for d, t in docs.items()}
    n = len(docs)
    avgdl = sum(len(t) for t in tokens.values()) / n
    scores = {}
    for d, toks in tokens.items():
        total = 0.0
        for term in query:
            tf = toks.count(term)
            if tf == 0:
                continue
            df = sum(1 for t in tokens.values() if term in t)
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            total += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(toks) / avgdl))
        if total > 0:
            scores[d] = total
    return sorted(scores.items(), key=lambda p: (-p[1], p[0]))


@pytest.mark.criterion(1, "BM25 oracle equivalence")
def test_c1_bm25_matches_brute_force():
    start = time.perf_counter()
    checked = 0
    for seed in range(20):
        rng = random.Random(seed)
        vocab = make_vocab(rng.randint(20, 500), seed)
        n_docs = rng.randint(1, 200)
        docs = {f"d{i:03d}": " ".join(rng.choice(vocab) for _ in range(rng.randint(1, 60))) for i in range(n_docs)}
        index = build_index(docs.items())
        for _ in range(5):
            query = [rng.choice(vocab) for _ in range(rng.randint(1, 6))]
            expected = brute_bm25(docs, query)
            got = bm25_search(index, " ".join(query), k=n_docs)
            assert got.ids() == [d for d, _ in expected]
            for (_, s_got), (_, s_exp) in zip(got, expected):
                assert s_got == pytest.approx(s_exp, abs=1e-9, rel=0)
            checked += 1
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0
    report(1, True, f"{checked} queries over 20 corpora in {elapsed:.2f}s")


# --- 2. nDCG correctness ---------------------------------------------------------

INV_LOG2_3 = 1 / math.log2(3)

NDCG_CASES = [
    # ranking, gold, k, expected
    (["a", "b", "c"], {"a"}, 10, 1.0),
    (["a", "b", "c"], {"a", "b"}, 10, 1.0),
    (["x", "y", "z"], {"a"}, 10, 0.0),
    (["d1", "d2", "d3"], {"d2"}, 10, INV_LOG2_3),
    (["x", "a"], {"a"}, 1, 0.0),
    (["a", "x", "b"], {"a", "b"}, 10, (1 + 1 / 2) / (1 + INV_LOG2_3)),
    (["x", "a", "b"], {"a", "b"}, 10, (INV_LOG2_3 + 1 / 2) / (1 + INV_LOG2_3)),
    # IDCG caps at k ideal positions when gold outnumbers k
    (["a", "b"], {"a", "b", "c", "d"}, 2, 1.0),
    (["x", "a"], {"a", "b", "c"}, 2, INV_LOG2_3 / (1 + INV_LOG2_3)),
    ([], {"a"}, 10, 0.0),
]


@pytest.mark.criterion(2, "nDCG correctness")
def test_c2_ndcg_hand_cases_and_exclusion():
    assert len(NDCG_CASES) >= 8
    for ranking, gold, k, expected in NDCG_CASES:
        assert ndcg_at_k(ranking, gold, k=k) == pytest.approx(expected, abs=1e-9)
        # Inserting excluded ids anywhere leaves the score unchanged.
        rng = random.Random(len(ranking) * 31 + k)
        noisy = list(ranking)
        for j in range(4):
            noisy.insert(rng.randint(0, len(noisy)), f"excl{j}")
        excluded = {f"excl{j}" for j in range(4)}
        assert ndcg_at_k(noisy, gold, excluded, k=k) == pytest.approx(expected, abs=1e-9)
    report(2, True, f"{len(NDCG_CASES)} hand cases, exclusion invariance")


# --- 3. InfoNCE ------------------------------------------------------------------

def fd_gradient(example, emb, eps=1e-4):
    grad = np.zeros_like(emb.weights)
    for idx in np.ndindex(emb.weights.shape):
        plus = ToyEmbedder(emb.weights.copy(), emb.seed)
        minus = ToyEmbedder(emb.weights.copy(), emb.seed)
        plus.weights[idx] += eps
        minus.weights[idx] -= eps
        grad[idx] = (loss_and_grad(example, plus)[0] - loss_and_grad(example, minus)[0]) / (2 * eps)
    return grad


@pytest.mark.criterion(3, "InfoNCE value, gradient and monotonicity")
def test_c3_infonce():
    assert abs(infonce_loss(0.37, [0.37]) - math.log(2)) < 1e-12

    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        emb = ToyEmbedder(rng.normal(0, 1, size=(5, 4)), seed=seed)
        ex = TrainingExample("query text alpha", "positive beta", ("negative gamma", "other delta"))
        _, analytic = loss_and_grad(ex, emb)
        numeric = fd_gradient(ex, emb)
        rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        worst = max(worst, float(rel.max()))
    assert worst < 1e-5

    rng = random.Random(3)
    for _ in range(100):
        s_pos = rng.uniform(-1, 1)
        s_negs = [rng.uniform(-1, 1) for _ in range(rng.randint(1, 5))]
        base = infonce_loss(s_pos, s_negs)
        delta = rng.uniform(1e-3, 0.5)
        assert infonce_loss(s_pos + delta, s_negs) < base
        j = rng.randrange(len(s_negs))
        bumped = list(s_negs)
        bumped[j] += delta
        assert infonce_loss(s_pos, bumped) > base
    report(3, True, f"max FD relative error {worst:.2e}")


# --- 4. Fusion endpoints -----------------------------------------------------------

def random_list(rng, n, prefix="d", provenance="dense"):
    return ScoredList.ranked({f"{prefix}{i:03d}": rng.uniform(-5, 5) for i in range(n)}, provenance)


@pytest.mark.criterion(4, "Fusion endpoints, normalization and chunk aggregation")
def test_c4_fusion():
    rng = random.Random(4)
    for _ in range(20):
        dense = minmax_normalize(random_list(rng, rng.randint(1, 30)))
        sparse = minmax_normalize(random_list(rng, rng.randint(1, 30), provenance="sparse"))
        only_dense = hybrid_fuse(dense, sparse, w_dense=1.0)
        only_sparse = hybrid_fuse(dense, sparse, w_dense=0.0)
        assert only_dense.ids()[: len(dense)] == dense.ids()
        assert only_sparse.ids()[: len(sparse)] == sparse.ids()

    for _ in range(100):
        scored = random_list(rng, rng.randint(2, 40))
        normed = minmax_normalize(scored)
        assert normed.ids() == scored.ids()
        assert np.array_equal(np.argsort(-np.array(scored.scores()), kind="stable"),
                              np.argsort(-np.array(normed.scores()), kind="stable"))

    for _ in range(20):
        pairs = {}
        for d in range(10):
            for c in range(rng.randint(1, 4)):
                pairs[(f"doc{d}", c)] = rng.random()
        expected = {}
        for (doc, _), s in pairs.items():
            expected[doc] = max(expected.get(doc, -math.inf), s)
        got = max_over_chunks(ScoredList.ranked(pairs, "dense"))
        assert got.as_dict() == expected
        assert got.ids() == sorted(expected, key=lambda d: (-expected[d], d))
    report(4, True)


# --- 5. Chunking ---------------------------------------------------------------

class TopicEmbedder:
    """Orthogonal unit vectors per topic keyword."""

    def embed_batch(self, texts, instruction=None):
        return np.array([[1.0, 0.0] if "alpha" in t else [0.0, 1.0] for t in texts])


def synthetic_docs(n=50, seed=5):
    rng = random.Random(seed)
    vocab = make_vocab(300, seed)
    docs = []
    for i in range(n):
        # Every tenth document is long enough to need the token budget.
        n_sent = rng.randint(400, 700) if i % 10 == 0 else rng.randint(1, 25)
        sents = [" ".join(rng.choice(vocab) for _ in range(rng.randint(3, 20))).capitalize() + "."
                 for _ in range(n_sent)]
        docs.append(Document(f"s{i:02d}", clean_text(" ".join(sents))))
    return docs


def fuzz_string(rng) -> str:
    alphabet = string.ascii_letters + string.digits + " \t\n\n\n.!?:;\"')]},-"
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 80)))


@pytest.mark.criterion(5, "Chunking bounds, reconstruction, topic split, clean_text idempotence")
def test_c5_chunking():
    embedder = HashingEmbedder(256, seed=0)
    params = ChunkParams()
    total = 0
    for doc in synthetic_docs():
        chunks = chunk_document(doc, embedder, params)
        total += len(chunks)
        assert [c.chunk_index for c in chunks] == list(range(len(chunks)))
        for c in chunks:
            assert c.token_count == count_tokens(c.core_text) <= 4096
        assert " ".join(c.core_text for c in chunks).split() == doc.text.split()
    big = synthetic_docs()[0]
    assert count_tokens(big.text) > 4096

    topic_a = " ".join(f"Sentence alpha number {i}." for i in range(4))
    topic_b = " ".join(f"Sentence beta number {i}." for i in range(3))
    chunks = chunk_document(Document("t", f"{topic_a} {topic_b}"), TopicEmbedder(), ChunkParams(overlap_fraction=0.0))
    assert [c.text for c in chunks] == [topic_a, topic_b]

    rng = random.Random(5)
    for _ in range(1000):
        once = clean_text(fuzz_string(rng))
        assert clean_text(once) == once
    report(5, True, f"{total} chunks from 50 documents")


# --- 6. Expansion protocol -----------------------------------------------------------

class CountingRetriever:
    def __init__(self, ids):
        self.ids = ids
        self.calls = []

    def search(self, text, k):
        self.calls.append(text)
        # Deterministic pseudo-relevance: rank depends on the search text.
        rng = random.Random(text)
        order = list(self.ids)
        rng.shuffle(order)
        return ScoredList([(d, 1.0 - i / len(order)) for i, d in enumerate(order[:k])], "dense")


@pytest.mark.criterion(6, "Expansion protocol and prompt golden files")
def test_c6_expansion():
    ids = [f"d{i:02d}" for i in range(20)]
    texts = {d: f"passage {d}" for d in ids}
    for rounds in (1, 2, 3):
        retriever = CountingRetriever(ids)
        llm = MockLLM([f"EXP{r}" for r in range(1, rounds + 1)])
        state = run_expansion("original question", retriever, llm, ExpansionConfig(rounds=rounds), texts)
        assert llm.calls == rounds and len(retriever.calls) == rounds
        flat = [d for r in state.retrieved for d in r]
        assert len(flat) == len(set(flat)) == rounds * 5
        assert state.expanded_query == f"original question\nEXP{rounds}"
        assert state.expanded_query.startswith("original question")

    retriever = CountingRetriever(ids)
    llm = MockLLM([])
    state = run_expansion("original question", retriever, llm, ExpansionConfig(rounds=0), texts)
    assert state.expanded_query == "original question"
    assert llm.calls == 0 and retriever.calls == []

    round1 = build_expansion_prompt(1, "why is the sky blue", [
        ("a", "Rayleigh scattering favors short wavelengths."), ("b", "Sunsets look red near the horizon.")])
    round2 = build_expansion_prompt(2, "why is the sky blue", [
        ("c", "Air molecules are much smaller than visible wavelengths.")],
        prior="Blue light scatters more strongly than red light.")
    assert round1 == (GOLDEN / "expand_round1.txt").read_text(encoding="utf-8").rstrip("\n")
    assert round2 == (GOLDEN / "expand_round2.txt").read_text(encoding="utf-8").rstrip("\n")
    report(6, True)


# --- 7. Rerank algebra -----------------------------------------------------------

ADVERSARIAL = [
    "", "no idea", "[1]", "[3] > [3] > [1]", "[9] > [0] > [-1]", "[2][2][2]", "2 > 1 > 3",
    "[ 2 ] > [ 1 ]", "[1] > [2] > [3] > [4] > [5] > [6]", "[5] > [4] > [3] > [2] > [1]",
    "ranking: [4], then [2]", "[[3]] > [[1]]", "[3 > 1]", "[1.5] > [2]", "[02] > [01]",
    "【" "1】", "[100000000000000000000]", "[2] [2] [4] [4] [1]", "}{[][", "[5]>[1]>[5]>[1]",
]


@pytest.mark.criterion(7, "Rerank algebra")
def test_c7_rerank_algebra():
    cfg = RerankConfig()
    for score in range(11):
        for retr in np.linspace(0, 1, 21):
            assert abs(pointwise_final(score, retr, cfg) - (0.6 * score / 10 + 0.4 * retr)) < 1e-12

    rng = random.Random(7)
    responses = ADVERSARIAL + [
        " > ".join(f"[{rng.randint(-2, 8)}]" for _ in range(rng.randint(0, 8))) + rng.choice(["", " junk", "!"])
        for _ in range(50 - len(ADVERSARIAL))
    ]
    assert len(responses) == 50
    for reply in responses:
        perm = complete_permutation(parse_ranking(reply, 5), 5)
        assert sorted(perm) == list(range(5))

    point = ScoredList.ranked({"a": 0.9, "b": 0.5, "c": 0.1}, "rerank_point")
    list_order = ["c", "a", "b"]
    only_point = combine_point_list(point, list_order, RerankConfig(w_point=1.0, w_list=0.0))
    only_list = combine_point_list(point, list_order, RerankConfig(w_point=0.0, w_list=1.0))
    assert only_point.ids() == ["a", "b", "c"]
    assert only_list.ids() == list_order
    report(7, True)


# --- 8. End-to-end wiring -----------------------------------------------------------

@pytest.mark.criterion(8, "End-to-end wiring sanity")
def test_c8_end_to_end(tmp_path):
    docs, queries, judgments = toy_corpus()
    assert len(docs) == 50
    corpus_path, queries_path = write_toy_files(tmp_path, docs, queries, judgments)
    cfg = PipelineConfig.load(None, [f"paths.corpus={corpus_path}", f"paths.queries={queries_path}"])
    llm = MockLLM(responder=GoldAwareResponder(docs, queries, judgments))
    result = run_pipeline(cfg, llm=llm, run_dir=tmp_path / "run")
    bm25, final = result.reports["bm25"].mean, result.reports["final"].mean
    assert bm25 < 1.0
    assert final > bm25
    assert final == pytest.approx(1.0)
    report(8, True, f"final {final:.3f} vs BM25 {bm25:.3f}")
