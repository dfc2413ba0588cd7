import logging

import pytest

from rrpipe.errors import ConfigError, DataError
from rrpipe.fusion import ScoredList
from rrpipe.llm import MockLLM
from rrpipe.rerank import (
    RerankConfig,
    combine_point_list,
    complete_permutation,
    listwise_prompt,
    listwise_rank,
    listwise_scores,
    parse_first_integer,
    parse_ranking,
    pointwise_final,
    pointwise_prompt,
    pointwise_rerank,
    pointwise_score,
)


class TestConfig:
    def test_defaults(self):
        c = RerankConfig()
        assert (c.scale_max, c.w_rerank, c.w_retriever, c.listwise_pool) == (10, 0.6, 0.4, 100)

    @pytest.mark.parametrize("kwargs", [
        {"w_rerank": 0.7},
        {"w_point": 0.2},
        {"w_rerank": 1.2, "w_retriever": -0.2},
        {"scale_max": 0},
        {"window_size": 1},
        {"window_stride": 30},
        {"parse_retries": -1},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            RerankConfig(**kwargs)


class TestPointwise:
    @pytest.mark.parametrize("reply, expected", [("8", 8), ("Score: 12", 12), ("-3 maybe", -3), ("none", None)])
    def test_parse_first_integer(self, reply, expected):
        assert parse_first_integer(reply) == expected

    @pytest.mark.parametrize("reply, score", [("8", 8), ("Score: 12", 10), ("-2", 0), ("7/10", 7)])
    def test_score_clamped(self, reply, score):
        j = pointwise_score("q", "doc", MockLLM([reply]))
        assert j.score == score and not j.warning

    def test_unparsable_twice_gives_zero_with_warning(self, caplog):
        llm = MockLLM(["no idea", "still no idea"])
        with caplog.at_level(logging.WARNING):
            j = pointwise_score("q", "doc", llm)
        assert (j.score, j.warning, j.attempts) == (0, True, 2)
        assert llm.calls == 2
        assert "no integer" in caplog.text

    def test_retry_then_success(self):
        j = pointwise_score("q", "doc", MockLLM(["hmm", "6"]))
        assert (j.score, j.attempts) == (6, 2)

    def test_empty_doc(self):
        with pytest.raises(DataError):
            pointwise_score("q", " ", MockLLM(["1"]))

    def test_prompt_mentions_scale(self):
        p = pointwise_prompt("my query", "my doc", RerankConfig(scale_max=5))
        assert "Query: my query" in p and "Document: my doc" in p and "0 to 5" in p

    @pytest.mark.parametrize("llm_score, retr, expected", [(8, 0.5, 0.68), (10, 1.0, 1.0), (0, 0.0, 0.0)])
    def test_final(self, llm_score, retr, expected):
        assert pointwise_final(llm_score, retr) == pytest.approx(expected)

    @pytest.mark.parametrize("llm_score, retr", [(5, 1.5), (5, -0.1), (11, 0.5)])
    def test_final_ranges(self, llm_score, retr):
        with pytest.raises(DataError):
            pointwise_final(llm_score, retr)

    def test_rerank_orders_and_breaks_ties(self):
        cands = ScoredList([("a", 0.9), ("b", 0.9), ("c", 0.1)], "hybrid")
        replies = {"A text": "2", "B text": "9", "C text": "9"}
        llm = MockLLM(responder=lambda p: next(v for k, v in replies.items() if k in p))
        ranked, judgments = pointwise_rerank("q", cands, {i: f"{i.upper()} text" for i in "abc"}, llm)
        assert ranked.ids() == ["b", "c", "a"]
        assert ranked.score_of("b") == pytest.approx(0.6 * 0.9 + 0.4 * 0.9)
        assert judgments["a"].score == 2
        assert ranked.provenance == "rerank_point"

    def test_parallel_matches_serial(self):
        cands = ScoredList([(f"d{i}", 1 - i / 10) for i in range(8)], "hybrid")
        texts = {f"d{i}": f"doc {i}" for i in range(8)}

        def responder(p):
            return str(sum(map(ord, p)) % 11)

        serial, _ = pointwise_rerank("q", cands, texts, MockLLM(responder=responder))
        parallel, _ = pointwise_rerank("q", cands, texts, MockLLM(responder=responder), workers=4)
        assert serial == parallel


class TestListwiseParsing:
    @pytest.mark.parametrize("reply, n, expected", [
        ("[2] > [1] > [3]", 3, [1, 0, 2]),
        ("[3] > [3] > [1]", 3, [2, 0]),
        ("[9] > [1]", 3, [0]),
        ("[ 2 ]>[1]", 2, [1, 0]),
        ("nothing", 3, []),
    ])
    def test_parse(self, reply, n, expected):
        assert parse_ranking(reply, n) == expected

    def test_completion_appends_missing_in_order(self):
        assert complete_permutation([2, 0], 4) == [2, 0, 1, 3]

    def test_prompt_numbers_passages(self):
        p = listwise_prompt("q", ["alpha", "beta"])
        assert "[1] alpha" in p and "[2] beta" in p


class TestListwiseRank:
    def test_three_items(self):
        order = listwise_rank("q", ["a", "b", "c"], {"a": "x", "b": "y", "c": "z"}, MockLLM(["[2] > [1] > [3]"]))
        assert order == ["b", "a", "c"]

    def test_repeat_and_missing(self):
        order = listwise_rank("q", ["a", "b", "c"], {"a": "x", "b": "y", "c": "z"}, MockLLM(["[3] > [3] > [1]"]))
        assert order == ["c", "a", "b"]

    def test_unparsable_keeps_input_order(self, caplog):
        llm = MockLLM(["???", "still ???"])
        with caplog.at_level(logging.WARNING):
            order = listwise_rank("q", ["a", "b"], {"a": "x", "b": "y"}, llm)
        assert order == ["a", "b"] and llm.calls == 2

    def test_single_candidate_needs_no_call(self):
        llm = MockLLM([])
        assert listwise_rank("q", ["a"], {"a": "x"}, llm) == ["a"] and llm.calls == 0

    def test_pool_limits(self):
        with pytest.raises(DataError):
            listwise_rank("q", [], {}, MockLLM([]))
        with pytest.raises(DataError):
            listwise_rank("q", list("abcd"), {}, MockLLM([]), RerankConfig(listwise_pool=3))

    def test_sliding_windows_bubble_best_to_top(self):
        ids = [f"d{i:02d}" for i in range(45)]
        texts = {i: f"text {i}" for i in ids}
        # The model always prefers the passage with the highest number.
        def responder(prompt):
            nums = [int(line.split("text d")[1]) for line in prompt.split("\n") if "text d" in line]
            order = sorted(range(len(nums)), key=lambda p: -nums[p])
            return " > ".join(f"[{p + 1}]" for p in order)
        llm = MockLLM(responder=responder)
        order = listwise_rank("q", ids, texts, llm, RerankConfig(window_size=20, window_stride=10))
        # Windows [25,45) [15,35) [5,25) [0,20)
        assert llm.calls == 4
        assert order[:10] == [f"d{i:02d}" for i in range(44, 34, -1)]
        assert sorted(order) == ids

    def test_windows_cover_small_pool_once(self):
        llm = MockLLM(["[1]"])
        listwise_rank("q", list("abc"), dict.fromkeys("abc", "t"), llm)
        assert llm.calls == 1


class TestCombine:
    def test_list_scores(self):
        assert listwise_scores(["a", "b"]).as_dict() == {"a": 1.0, "b": 0.5}

    def test_two_item_example(self):
        point = ScoredList([("a", 0.9), ("b", 0.3)], "rerank_point")
        final = combine_point_list(point, ["b", "a"])
        assert final.as_dict() == {"a": 0.75, "b": 0.5}
        assert final.ids() == ["a", "b"] and final.provenance == "final"

    def test_weights_shift_order(self):
        point = ScoredList([("a", 1.0), ("b", 0.0)], "rerank_point")
        # a: .25 * 1 + .75 * .5 = .625, b: .75 * 1 = .75
        assert combine_point_list(point, ["b", "a"], RerankConfig(w_point=0.25, w_list=0.75)).ids() == ["b", "a"]

    def test_tie_falls_back_to_id(self):
        point = ScoredList([("a", 1.0), ("b", 0.0)], "rerank_point")
        final = combine_point_list(point, ["b", "a"], RerankConfig(w_point=1 / 3, w_list=2 / 3))
        assert final.scores()[0] == pytest.approx(final.scores()[1])
        assert final.ids() == ["a", "b"]

    def test_tie_prefers_retrieval_score(self):
        point = ScoredList([("a", 1.0), ("b", 0.0)], "rerank_point")
        final = combine_point_list(point, ["b", "a"], RerankConfig(w_point=1 / 3, w_list=2 / 3),
                                   retrieval={"a": 0.1, "b": 0.9})
        assert final.ids() == ["b", "a"]

    def test_constant_pointwise_follows_list(self):
        flat = ScoredList([("a", 0.4), ("b", 0.4), ("c", 0.4)], "rerank_point")
        assert combine_point_list(flat, ["c", "a", "b"]).ids() == ["c", "a", "b"]

    def test_id_mismatch(self):
        with pytest.raises(DataError):
            combine_point_list(ScoredList([("a", 1.0)], "rerank_point"), ["b"])
        with pytest.raises(DataError):
            combine_point_list(ScoredList([("a", 1.0)], "rerank_point"), ["a", "a"])
