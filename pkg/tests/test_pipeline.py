from __future__ import annotations

import pytest

from namegen.core import RetrievalParams, ThresholdParams, UserQuery
from namegen.corpus import build_index
from namegen.pipeline import PipelineDeps, PipelineOptions, prepare, run_query

from conftest import happy_rules, make_team


def make_deps(corpus, embedder, rules, options=None, team_out=None):
    team, ledger, capture = make_team(rules)
    if team_out is not None:
        team_out.extend([team, ledger, capture])
    return PipelineDeps(
        team=team,
        prompts=team.manager.prompts,
        corpus=corpus,
        index=build_index(corpus, embedder),
        embedder=embedder,
        params=ThresholdParams(retrieval=RetrievalParams(top_k=3)),
        options=options or PipelineOptions(),
    )


class TestPrepare:
    def test_full_preparation_bundle(self, corpus, embedder, ncb_query):
        deps = make_deps(corpus, embedder, happy_rules())
        result = prepare(ncb_query, deps)
        info = result.info
        assert info.task_type == "naming a Chinese baby"
        assert info.objective_count == 5
        assert info.preference.weights == pytest.approx((3 / 7,) + (1 / 7,) * 4)
        assert info.retrieved_knowledge.record.id == "p02"
        assert info.key_info["season"] == "summer"
        assert info.key_info["theme"] == "山水"
        assert len(info.shots) == 2
        assert not result.warnings

    def test_objective_specs_carry_designs(self, corpus, embedder, ncb_query):
        deps = make_deps(corpus, embedder, happy_rules())
        result = prepare(ncb_query, deps)
        for spec, desc, req in zip(
            result.objectives, result.info.descriptions, result.info.requirements
        ):
            assert spec.description == desc
            assert spec.requirement == req
            assert desc and req

    def test_user_objectives_bypass_parsing(self, corpus, embedder):
        query = UserQuery(
            raw_text="李姓男孩，名字出自诗词。",
            surname="李",
            explicit_objectives=("出自诗词", "聪慧清朗"),
        )
        # no parse/review rules are needed: the stage is skipped entirely
        rules = [
            r
            for r in happy_rules()
            if "Propose between" not in r[0] and "Review the proposed" not in r[0]
        ]
        rules = [
            (
                "write a detailed description",
                "DESCRIPTION[1]: 取自山水诗。\nREQUIREMENT[1]: 引用诗句。\n"
                "DESCRIPTION[2]: 体现聪慧。\nREQUIREMENT[2]: 说明对应。",
            )
            if m == "write a detailed description"
            else (m, r)
            for m, r in rules
        ]
        team_out: list = []
        deps = make_deps(corpus, embedder, rules, team_out=team_out)
        result = prepare(query, deps)
        assert result.objectives.labels == ("出自诗词", "聪慧清朗")
        capture = team_out[2]
        assert not capture.prompts_containing("Propose between 2 and 8")

    def test_single_objective_skips_preference_call(self, corpus, embedder):
        query = UserQuery(
            raw_text="李姓男孩。", surname="李", explicit_objectives=("出自诗词",)
        )
        rules = [
            ("Identify the concrete task type", "TASK_TYPE: naming a Chinese baby"),
            ("Extract the key facts", "INFO[theme]: 山水"),
            ("Write a short retrieval query", "QUERY: 山水 清晖"),
            ("choosing supporting knowledge", "SELECT: p02\nREASON: 契合"),
            (
                "write a detailed description",
                "DESCRIPTION[1]: 取自山水诗。\nREQUIREMENT[1]: 引用诗句。",
            ),
            ("Check the objective descriptions", "APPROVE: yes\nFEEDBACK: ok"),
        ]
        team_out: list = []
        deps = make_deps(corpus, embedder, rules, team_out=team_out)
        result = prepare(query, deps)
        assert result.info.preference.weights == (1.0,)
        capture = team_out[2]
        assert not capture.prompts_containing("Estimate how strongly")

    def test_preset_task_type_skips_analysis(self, corpus, embedder, ncb_query):
        rules = [r for r in happy_rules() if "Identify the concrete" not in r[0]]
        team_out: list = []
        deps = make_deps(
            corpus,
            embedder,
            rules,
            options=PipelineOptions(task_type="naming a Chinese baby"),
            team_out=team_out,
        )
        result = prepare(ncb_query, deps)
        assert result.info.task_type == "naming a Chinese baby"
        capture = team_out[2]
        assert not capture.prompts_containing("Identify the concrete task type")

    def test_expansion_flag_off_skips_call(self, corpus, embedder, ncb_query):
        rules = [r for r in happy_rules() if "Extract the key facts" not in r[0]]
        team_out: list = []
        deps = make_deps(
            corpus,
            embedder,
            rules,
            options=PipelineOptions(expand_key_info=False),
            team_out=team_out,
        )
        result = prepare(ncb_query, deps)
        assert "theme" not in result.info.key_info  # expansion never ran
        capture = team_out[2]
        assert not capture.prompts_containing("Extract the key facts")


class TestRunQuery:
    def test_full_run_call_accounting(self, corpus, embedder, ncb_query):
        team_out: list = []
        deps = make_deps(corpus, embedder, happy_rules(), team_out=team_out)
        result = run_query(ncb_query, deps)
        assert result.optimization.accepted
        assert result.optimization.output.result == "李清晖"
        # preparation: analysis 1 + objectives 2 + preference 1 + expansion 1
        # + design 2 = 7; retrieval: query + selection = 2;
        # optimization: generation 1 + 5 implicit + 5 explicit = 11
        assert result.ledger == {
            "preparation": 7,
            "retrieval": 2,
            "generation": 1,
            "implicit_eval": 5,
            "explicit_eval": 5,
            "total": 20,
        }

    def test_unapproved_design_recorded_as_warning(self, corpus, embedder, ncb_query):
        rules = [
            (m, "APPROVE: no\nFEEDBACK: still vague")
            if m == "Check the objective descriptions"
            else (m, r)
            for m, r in happy_rules()
        ]
        deps = make_deps(corpus, embedder, rules)
        result = prepare(ncb_query, deps)
        assert any("never approved" in w for w in result.warnings)
