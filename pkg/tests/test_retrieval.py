from __future__ import annotations

import pytest

from namegen.core import RetrievalParams, UserQuery
from namegen.corpus import Corpus, PoemRecord, build_index
from namegen.retrieval import (
    RetrievalEmptyError,
    moo_retrieve,
    retrieval_predicates,
)

from conftest import POEMS, make_team

QUERY = UserQuery(raw_text="盼望聪慧清朗，名字希望出自山水诗。", surname="李")


@pytest.fixture
def small_corpus():
    return Corpus(records=[PoemRecord(**p) for p in POEMS[:3]])  # p01 p02 p03


@pytest.fixture
def small_index(small_corpus, embedder):
    return build_index(small_corpus, embedder)


def retrieve(team, corpus, index, embedder, params, key_info=None):
    return moo_retrieve(
        query=QUERY,
        key_info=key_info or {},
        corpus=corpus,
        index=index,
        embedder=embedder,
        params=params,
        manager=team.manager,
        evaluator=team.evaluator,
        task_type="naming a Chinese baby",
    )


class TestPlantedBest:
    def test_planted_poem_recovered_in_round_one(
        self, small_corpus, small_index, embedder
    ):
        team, ledger, _ = make_team(
            [
                ("Write a short retrieval query", "QUERY: 山水 清晖"),
                ("choosing supporting knowledge", "SELECT: p02\nREASON: 清晖契合"),
            ]
        )
        params = RetrievalParams(coarse_rounds=0, max_rounds=3, top_k=3)
        result = retrieve(team, small_corpus, small_index, embedder, params)
        assert result.knowledge.record.id == "p02"
        assert result.knowledge.rationale == "清晖契合"
        assert result.state.round == 1
        assert len(result.state.history) == 3  # |H| equals top_k after round 1
        # the planted poem shares the query's n-grams, so it ranks first
        assert result.state.rounds_candidates[0][0] == "p02"
        assert ledger.snapshot()["retrieval"] == 2  # query build + one evaluation

    def test_single_candidate_subset(self, embedder):
        corpus = Corpus(records=[PoemRecord(**POEMS[1])])
        index = build_index(corpus, embedder)
        team, _, _ = make_team(
            [
                ("Write a short retrieval query", "QUERY: 山水"),
                ("choosing supporting knowledge", "SELECT: p02\nREASON: 唯一候选"),
            ]
        )
        params = RetrievalParams(coarse_rounds=0, max_rounds=2, top_k=5)
        result = retrieve(team, corpus, index, embedder, params)
        assert result.knowledge.record.id == "p02"


class TestRejectionLoop:
    def test_always_rejecting_evaluator_falls_back(
        self, small_corpus, small_index, embedder
    ):
        team, _, capture = make_team(
            [
                ("Write a short retrieval query", "QUERY: 山水 清晖"),
                ("No candidate was approved", "SELECT: p02\nREASON: best of history"),
                ("choosing supporting knowledge", "REWRITE: 清晖 别意 重觅"),
            ]
        )
        params = RetrievalParams(coarse_rounds=0, max_rounds=2, top_k=1)
        result = retrieve(team, small_corpus, small_index, embedder, params)
        assert result.knowledge.record.id == "p02"
        assert result.state.evaluator_calls == 3  # two rejections plus the fallback
        assert result.knowledge.rationale == "best of history"

    def test_no_record_shown_twice(self, small_corpus, small_index, embedder):
        team, _, _ = make_team(
            [
                ("Write a short retrieval query", "QUERY: 山水 清晖"),
                ("No candidate was approved", "SELECT: p01\nREASON: x"),
                ("choosing supporting knowledge", "REWRITE: 再觅"),
            ]
        )
        params = RetrievalParams(coarse_rounds=0, max_rounds=3, top_k=1)
        result = retrieve(team, small_corpus, small_index, embedder, params)
        shown = [rid for round_ids in result.state.rounds_candidates for rid in round_ids]
        assert len(shown) == len(set(shown))
        assert len(result.state.history) == 3

    def test_termination_bound_with_exhausted_corpus(self, embedder):
        # corpus smaller than the round budget: loop stops when pool is empty
        corpus = Corpus(records=[PoemRecord(**p) for p in POEMS[:2]])
        index = build_index(corpus, embedder)
        team, _, _ = make_team(
            [
                ("Write a short retrieval query", "QUERY: 山水"),
                ("No candidate was approved", "SELECT: p02\nREASON: x"),
                ("choosing supporting knowledge", "REWRITE: 换个说法"),
            ]
        )
        params = RetrievalParams(coarse_rounds=0, max_rounds=5, top_k=1)
        result = retrieve(team, corpus, index, embedder, params)
        assert result.state.exhausted
        assert result.state.evaluator_calls == 3  # two shown rounds + fallback


class TestCoarseFiltering:
    def test_filter_applies_only_before_cap(self, small_corpus, small_index, embedder):
        # round 1 filters to the moon poem; round 2 runs unfiltered and the
        # planted best becomes visible
        team, _, _ = make_team(
            [
                ("Write a short retrieval query", "QUERY: 山水 清晖"),
                ("[p02]", "SELECT: p02\nREASON: 山水契合"),
                ("choosing supporting knowledge", "REWRITE: 山水 清晖 再觅"),
            ]
        )
        params = RetrievalParams(coarse_rounds=2, max_rounds=3, top_k=1)
        result = retrieve(
            team, small_corpus, small_index, embedder, params, key_info={"theme": "月"}
        )
        assert result.state.rounds_candidates[0] == ["p01"]
        assert result.state.rounds_candidates[1] == ["p02"]
        assert result.knowledge.record.id == "p02"

    def test_empty_after_filter_round_one(self, small_corpus, small_index, embedder):
        team, ledger, _ = make_team([("x", "y")])
        params = RetrievalParams(coarse_rounds=2, max_rounds=3, top_k=1)
        with pytest.raises(RetrievalEmptyError):
            retrieve(
                team,
                small_corpus,
                small_index,
                embedder,
                params,
                key_info={"theme": "不存在"},
            )
        assert ledger.total == 0  # fails before any backend call

    def test_predicates_from_key_info(self):
        key_info = {"theme": "山水", "surname": "李", "content": "月", "note": "x"}
        assert retrieval_predicates(key_info) == {"theme": "山水", "content": "月"}


class TestRewriteContract:
    def test_rewrite_prompt_contains_prior_query_verbatim(
        self, small_corpus, small_index, embedder
    ):
        team, _, capture = make_team(
            [
                ("Write a short retrieval query", "QUERY: 山水清晖独特查询串"),
                ("No candidate was approved", "SELECT: p02\nREASON: x"),
                ("choosing supporting knowledge", "REWRITE: 改写后的查询"),
            ]
        )
        params = RetrievalParams(coarse_rounds=0, max_rounds=2, top_k=1)
        retrieve(team, small_corpus, small_index, embedder, params)
        evaluate_prompts = capture.prompts_containing("choosing supporting knowledge")
        assert "山水清晖独特查询串" in evaluate_prompts[0]
        # the second round evaluates under the rewritten query
        assert "改写后的查询" in evaluate_prompts[1]

    def test_unknown_select_id_reasks_then_fails(
        self, small_corpus, small_index, embedder
    ):
        from namegen.agents import AgentError

        team, _, _ = make_team(
            [
                ("Write a short retrieval query", "QUERY: 山水"),
                ("choosing supporting knowledge", "SELECT: p99\nREASON: bogus"),
            ]
        )
        params = RetrievalParams(coarse_rounds=0, max_rounds=2, top_k=1)
        with pytest.raises(AgentError):
            retrieve(team, small_corpus, small_index, embedder, params)
