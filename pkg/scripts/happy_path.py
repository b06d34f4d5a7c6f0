#!/usr/bin/env python3
"""Minimal end-to-end demo against fully scripted backends.

Runs one naming query through the whole pipeline with a lean preparation
profile (preset task type, no key-info expansion, no design review loop)
and a single user-supplied objective, then prints the result and the total
backend call count. Everything is offline and deterministic.
"""

from __future__ import annotations

from namegen.core import RetrievalParams, ThresholdParams, UserQuery
from namegen.corpus import Corpus, PoemRecord, build_index, HashNgramEmbedder
from namegen.gateway import CallLedger, Gateway, mock_script
from namegen.agents import AgentTeam, Evaluator, Generator, Manager
from namegen.pipeline import PipelineDeps, PipelineOptions, run_query
from namegen.prompts import PromptLibrary

POEMS = [
    PoemRecord(
        id="m01",
        poet="林逋",
        dynasty="宋",
        title="山园小梅",
        content=("众芳摇落独暄妍，占尽风情向小园。", "疏影横斜水清浅，暗香浮动月黄昏。"),
        interpretation="咏梅名篇，疏影暗香。",
        theme=("梅", "山水"),
    ),
    PoemRecord(
        id="m02",
        poet="李白",
        dynasty="唐",
        title="静夜思",
        content=("床前明月光，疑是地上霜。", "举头望明月，低头思故乡。"),
        interpretation="望月思乡。",
        theme=("月",),
    ),
    PoemRecord(
        id="m03",
        poet="王之涣",
        dynasty="唐",
        title="登鹳雀楼",
        content=("白日依山尽，黄河入海流。", "欲穷千里目，更上一层楼。"),
        interpretation="登高望远。",
        theme=("志向",),
    ),
]

RULES = [
    ("Write a short retrieval query", "QUERY: 疏影 暗香 梅"),
    ("choosing supporting knowledge", "SELECT: m01\nREASON: 疏影意象清雅，正合所求"),
    (
        "write a detailed description",
        "DESCRIPTION[1]: 名字应取自《山园小梅》一类咏物诗，清雅含蓄。\n"
        "REQUIREMENT[1]: 解释必须引用具体诗句并说明出处。",
    ),
    (
        "You are the creative generator",
        "NAME: 林疏影\n"
        "EXPLANATION[1]: 「疏影横斜水清浅」出自林逋《山园小梅》，“疏”“影”二字取自此句，清雅含蓄。",
    ),
    (
        "Rate the explanation below against",
        "SCORE_COM: 3\nSCORE_CLA: 3\nFEEDBACK: ok",
    ),
    ("Rate how well the explanation", "SCORE_EXP: 3\nFEEDBACK: meets objective"),
]


def main() -> int:
    corpus = Corpus(records=POEMS)
    embedder = HashNgramEmbedder(dim=256, seed=0)
    prompts = PromptLibrary()
    ledger = CallLedger()
    transport = mock_script(RULES)
    team = AgentTeam(
        manager=Manager(Gateway(transport=transport, ledger=ledger), prompts),
        generator=Generator(Gateway(transport=transport, ledger=ledger), prompts),
        evaluator=Evaluator(Gateway(transport=transport, ledger=ledger), prompts),
    )
    deps = PipelineDeps(
        team=team,
        prompts=prompts,
        corpus=corpus,
        index=build_index(corpus, embedder),
        embedder=embedder,
        params=ThresholdParams(retrieval=RetrievalParams(coarse_rounds=0, max_rounds=2, top_k=2)),
        options=PipelineOptions(
            task_type="naming a Chinese baby",
            expand_key_info=False,
            design_review_rounds=0,
            shots=0,
        ),
    )
    query = UserQuery(
        raw_text="姓林，女孩，希望名字出自诗词，清雅含蓄。",
        surname="林",
        explicit_objectives=("名字出自古典诗词，清雅含蓄",),
    )
    result = run_query(query, deps)
    output = result.optimization.output
    print(f"result: {output.result}")
    for k, explanation in enumerate(output.explanations, start=1):
        print(f"explanation {k}: {explanation}")
    print(f"accepted in round: {result.optimization.rounds[-1].record.round}")
    for stage, count in sorted(result.ledger.items()):
        if stage != "total" and count:
            print(f"  {stage}: {count}")
    print(f"backend calls: {result.ledger['total']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
