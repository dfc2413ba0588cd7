import json
import logging
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rrpipe.corpus import Judgments
from rrpipe.errors import DataError
from rrpipe.evaluation import (
    evaluate_run,
    format_table,
    ndcg_at_k,
    read_trec,
    run_from_lists,
    write_report,
    write_trec,
)
from rrpipe.fusion import ScoredList


def judg(gold, excluded=None, dataset=None):
    return Judgments({q: frozenset(g) for q, g in gold.items()},
                     {q: frozenset(e) for q, e in (excluded or {}).items()}, dataset or {})


class TestNdcg:
    @pytest.mark.parametrize("ranking, gold, expected", [
        (["a"], {"a"}, 1.0),
        (["b", "a"], {"a"}, 1 / math.log2(3)),
        (["x", "y"], {"a"}, 0.0),
        (["a", "x", "b"], {"a", "b"}, (1 + 0.5) / (1 + 1 / math.log2(3))),
        ([], {"a"}, 0.0),
    ])
    def test_hand_values(self, ranking, gold, expected):
        assert ndcg_at_k(ranking, gold) == pytest.approx(expected)

    def test_cutoff(self):
        assert ndcg_at_k(["x", "y", "a"], {"a"}, k=2) == 0.0

    def test_ideal_uses_min_of_k_and_gold(self):
        gold = {f"g{i}" for i in range(20)}
        assert ndcg_at_k(sorted(gold), gold, k=10) == pytest.approx(1.0)

    def test_excluded_removed_before_cutoff(self):
        assert ndcg_at_k(["x", "a"], {"a"}, excluded={"x"}, k=1) == 1.0

    def test_gold_all_excluded(self):
        with pytest.raises(DataError):
            ndcg_at_k(["a"], {"a"}, excluded={"a"})

    def test_bad_k(self):
        with pytest.raises(ValueError):
            ndcg_at_k(["a"], {"a"}, k=0)

    @settings(max_examples=100, deadline=None)
    @given(st.permutations([f"d{i}" for i in range(12)]), st.sets(st.sampled_from([f"d{i}" for i in range(12)]),
                                                                   min_size=1))
    def test_bounded_and_ideal_is_one(self, ranking, gold):
        v = ndcg_at_k(ranking, gold)
        assert 0.0 <= v <= 1.0 + 1e-12
        ideal = sorted(ranking, key=lambda d: d not in gold)
        assert ndcg_at_k(ideal, gold) == pytest.approx(1.0)


class TestEvaluateRun:
    def test_mean_and_datasets(self):
        j = judg({f"q{i}": {"a"} for i in range(5)}, dataset={"q0": "x", "q1": "x", "q2": "y", "q3": "y", "q4": "y"})
        run = {"q0": [("a", 1)], "q1": [("b", 1), ("a", 0.5)], "q2": [("a", 1)], "q3": [("z", 1)], "q4": [("a", 1)]}
        rep = evaluate_run(run, j)
        p1 = 1 / math.log2(3)
        assert rep.mean == pytest.approx((3 + p1) / 5)
        assert rep.per_dataset == pytest.approx({"x": (1 + p1) / 2, "y": 2 / 3})
        assert rep.macro == pytest.approx(((1 + p1) / 2 + 2 / 3) / 2)

    def test_missing_query_scores_zero(self, caplog):
        with caplog.at_level(logging.WARNING):
            rep = evaluate_run({"q1": [("a", 1)]}, judg({"q1": {"a"}, "q2": {"b"}}))
        assert rep.per_query == {"q1": 1.0, "q2": 0.0}
        assert rep.missing == ["q2"] and "missing" in caplog.text

    def test_duplicate_doc_in_ranking(self):
        with pytest.raises(DataError):
            evaluate_run({"q1": [("a", 1), ("a", 0.5)]}, judg({"q1": {"a"}}))

    def test_unjudged_run_queries_ignored(self):
        rep = evaluate_run({"q1": [("a", 1)], "extra": [("a", 1)]}, judg({"q1": {"a"}}))
        assert list(rep.per_query) == ["q1"]


class TestTrec:
    def test_roundtrip(self, tmp_path):
        run = run_from_lists({"q2": ScoredList([("b", 0.5), ("a", 0.25)], "final"), "q1": [("c", 1.0)]})
        write_trec(tmp_path / "r.trec", run, tag="t")
        lines = (tmp_path / "r.trec").read_text().splitlines()
        assert lines[0] == "q1 Q0 c 1 1.0000000000 t"
        assert read_trec(tmp_path / "r.trec") == run

    def test_read_orders_by_score(self, tmp_path):
        (tmp_path / "r.trec").write_text("q Q0 a 1 0.1 x\nq Q0 b 2 0.9 x\n")
        assert read_trec(tmp_path / "r.trec") == {"q": [("b", 0.9), ("a", 0.1)]}

    @pytest.mark.parametrize("content", ["q Q0 a 1 0.1\n", "q Q0 a one 0.1 x\n", "q Q0 a 1 0.1 x\nq Q0 a 2 0.0 x\n"])
    def test_malformed(self, tmp_path, content):
        (tmp_path / "r.trec").write_text(content)
        with pytest.raises(DataError):
            read_trec(tmp_path / "r.trec")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_trec(tmp_path / "none.trec")


class TestReports:
    def make(self):
        j = judg({"q1": {"a"}, "q2": {"b"}}, dataset={"q1": "alpha", "q2": "beta"})
        return {
            "bm25": evaluate_run({"q1": [("a", 1)], "q2": [("x", 1), ("b", 0)]}, j),
            "final": evaluate_run({"q1": [("a", 1)], "q2": [("b", 1)]}, j),
        }

    def test_table(self):
        table = format_table(self.make())
        header, rule, bm25, final = table.splitlines()
        assert header.split() == ["nDCG@10", "Avg.", "alpha", "beta"]
        assert set(rule) == {"-"}
        assert final.split() == ["final", "100.0", "100.0", "100.0"]
        assert bm25.split()[0] == "bm25"

    def test_files_written(self, tmp_path):
        paths = write_report(tmp_path / "rep", self.make())
        for key in ("table", "json", "tsv", "fig_datasets", "fig_queries"):
            assert paths[key].exists() and paths[key].stat().st_size > 0
        assert paths["fig_datasets"].read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        data = json.loads(paths["json"].read_text())
        assert data["final"]["metric"] == "ndcg@10" and data["final"]["mean"] == 1.0
        tsv = paths["tsv"].read_text().splitlines()
        assert tsv[0] == "query_id\tdataset\tbm25\tfinal"
        assert tsv[1].startswith("q1\talpha\t1.000000")

    def test_no_figures(self, tmp_path):
        paths = write_report(tmp_path, self.make(), figures=False)
        assert "fig_datasets" not in paths and not list(tmp_path.glob("*.png"))
