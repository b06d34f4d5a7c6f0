from __future__ import annotations

import datetime as dt
import json
from pathlib import Path

import pytest

from namegen.core import Gender, ThresholdParams, RetrievalParams, UserQuery
from namegen.corpus import Corpus, HashNgramEmbedder, PoemRecord, build_index
from namegen.gateway import CallLedger, Gateway, ScriptedTransport
from namegen.agents import AgentTeam, Evaluator, Generator, Manager
from namegen.prompts import PromptLibrary

POEMS = [
    {
        "id": "p01",
        "poet": "李白",
        "dynasty": "唐",
        "title": "静夜思",
        "content": ["床前明月光，疑是地上霜。", "举头望明月，低头思故乡。"],
        "interpretation": "望月思乡之作。",
        "theme": ["月", "思乡"],
    },
    {
        "id": "p02",
        "poet": "谢灵运",
        "dynasty": "南北朝",
        "title": "石壁精舍还湖中作",
        "content": ["昏旦变气候，山水含清晖。", "清晖能娱人，游子憺忘归。"],
        "interpretation": "山水清晖，令人流连。",
        "theme": ["山水"],
    },
    {
        "id": "p03",
        "poet": "孟浩然",
        "dynasty": "唐",
        "title": "春晓",
        "content": ["春眠不觉晓，处处闻啼鸟。", "夜来风雨声，花落知多少。"],
        "interpretation": "春日清晨的生机。",
        "theme": ["春"],
    },
    {
        "id": "p04",
        "poet": "王之涣",
        "dynasty": "唐",
        "title": "登鹳雀楼",
        "content": ["白日依山尽，黄河入海流。", "欲穷千里目，更上一层楼。"],
        "interpretation": "登高望远，志存高远。",
        "theme": ["志向"],
    },
    {
        "id": "p05",
        "poet": "王维",
        "dynasty": "唐",
        "title": "相思",
        "content": ["红豆生南国，春来发几枝。", "愿君多采撷，此物最相思。"],
        "interpretation": "借红豆寄相思。",
        "theme": ["相思"],
    },
    {
        "id": "p06",
        "poet": "王维",
        "dynasty": "唐",
        "title": "山居秋暝",
        "content": ["空山新雨后，天气晚来秋。", "明月松间照，清泉石上流。"],
        "interpretation": "秋夜山居，月照清泉。",
        "theme": ["月", "山水"],
    },
    {
        "id": "p07",
        "poet": "李白",
        "dynasty": "唐",
        "title": "夜宿山寺",
        "content": ["危楼高百尺，手可摘星辰。", "不敢高声语，恐惊天上人。"],
        "interpretation": "高楼摘星的奇想。",
        "theme": ["志向"],
    },
    {
        "id": "p08",
        "poet": "骆宾王",
        "dynasty": "唐",
        "title": "咏鹅",
        "content": ["鹅鹅鹅，曲项向天歌。", "白毛浮绿水，红掌拨清波。"],
        "interpretation": "咏物之趣。",
        "theme": ["咏物"],
    },
    {
        "id": "p09",
        "poet": "李绅",
        "dynasty": "唐",
        "title": "悯农",
        "content": ["锄禾日当午，汗滴禾下土。", "谁知盘中餐，粒粒皆辛苦。"],
        "interpretation": "劳作辛苦，粒粒不易。",
        "theme": ["劳作"],
    },
    {
        "id": "p10",
        "poet": "李白",
        "dynasty": "唐",
        "title": "望庐山瀑布",
        "content": ["日照香炉生紫烟，遥看瀑布挂前川。", "飞流直下三千尺，疑是银河落九天。"],
        "interpretation": "瀑布飞流的壮景。",
        "theme": ["山水"],
    },
]


def write_corpus_file(path: Path, poems: list[dict] | None = None) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for poem in poems if poems is not None else POEMS:
            fh.write(json.dumps(poem, ensure_ascii=False) + "\n")
    return path


@pytest.fixture
def poem_records() -> list[PoemRecord]:
    return [PoemRecord(**p) for p in POEMS]


@pytest.fixture
def corpus(poem_records) -> Corpus:
    return Corpus(records=poem_records)


@pytest.fixture
def corpus_path(tmp_path) -> Path:
    return write_corpus_file(tmp_path / "poems.jsonl")


@pytest.fixture
def embedder() -> HashNgramEmbedder:
    return HashNgramEmbedder(dim=256, seed=0)


@pytest.fixture
def index(corpus, embedder):
    return build_index(corpus, embedder)


@pytest.fixture
def prompts() -> PromptLibrary:
    return PromptLibrary()


class CapturingTransport:
    """Wraps a transport and records every (prompt, reply) exchange."""

    def __init__(self, inner):
        self.inner = inner
        self.exchanges: list[tuple[str, str]] = []

    def send(self, messages, params) -> str:
        prompt = "\n".join(m.content for m in messages)
        reply = self.inner.send(messages, params)
        self.exchanges.append((prompt, reply))
        return reply

    def prompts_containing(self, needle: str) -> list[str]:
        return [p for p, _ in self.exchanges if needle in p]


def make_team(rules, prompts: PromptLibrary | None = None):
    """One scripted transport behind all three roles, one shared ledger."""
    prompts = prompts or PromptLibrary()
    capture = CapturingTransport(ScriptedTransport(rules))
    ledger = CallLedger()
    team = AgentTeam(
        manager=Manager(Gateway(transport=capture, ledger=ledger), prompts),
        generator=Generator(Gateway(transport=capture, ledger=ledger), prompts),
        evaluator=Evaluator(Gateway(transport=capture, ledger=ledger), prompts),
    )
    return team, ledger, capture


NCB_QUERY = UserQuery(
    raw_text="李姓男孩，2024年7月15日出生，盼望聪慧清朗，名字希望出自古典诗词。",
    surname="李",
    birth_datetime=dt.datetime(2024, 7, 15, 8, 30),
    gender=Gender.MALE,
)

GOOD_NAME_REPLY = (
    "NAME: 李清晖\n"
    "EXPLANATION[1]: 「山水含清晖」出自谢灵运《石壁精舍还湖中作》，“清”“晖”二字取自此句，承山水灵秀之气。\n"
    "EXPLANATION[2]: 清朗之名寄托父母对孩子聪慧清明的期望。\n"
    "EXPLANATION[3]: 夏季出生，清字含水意，与生辰五行相合。\n"
    "EXPLANATION[4]: 名字气质清雅，契合聪慧清朗的个人特质。\n"
    "EXPLANATION[5]: 读音清亮顺口，无不良谐音。\n"
)

FIVE_OBJECTIVES_REPLY = (
    "OBJECTIVES: traditional Chinese cultural significance; parental expectations; "
    "Bazi&Wuxing; personal characteristics; other special requirements"
)

DESIGN_REPLY = "\n".join(
    [
        "DESCRIPTION[1]: 名字应取自《石壁精舍还湖中作》一类山水诗，承古典文化意蕴。",
        "REQUIREMENT[1]: 解释必须引用具体诗句并说明出处。",
        "DESCRIPTION[2]: 体现父母盼望孩子聪慧清朗的期望。",
        "REQUIREMENT[2]: 解释需点明期望与名字的对应。",
        "DESCRIPTION[3]: 结合2024年夏季出生的生辰因素。",
        "REQUIREMENT[3]: 解释需说明五行取舍依据。",
        "DESCRIPTION[4]: 突出清雅聪慧的个人气质。",
        "REQUIREMENT[4]: 解释需描述名字传达的气质。",
        "DESCRIPTION[5]: 读音清亮、无不良谐音。",
        "REQUIREMENT[5]: 解释需说明读音与谐音检查。",
    ]
)


def happy_rules() -> list[tuple[str, str]]:
    """Scripted transcript for a full pipeline run that accepts in round 1."""
    return [
        ("Identify the concrete task type", "TASK_TYPE: naming a Chinese baby"),
        ("Propose between 2 and 8", FIVE_OBJECTIVES_REPLY),
        ("Review the proposed objectives", "APPROVE: yes\nFEEDBACK: ok"),
        ("Estimate how strongly the user cares", "WEIGHTS: 3, 1, 1, 1, 1"),
        ("Extract the key facts", "INFO[theme]: 山水\nINFO[expectation]: 聪慧清朗"),
        ("Write a short retrieval query", "QUERY: 山水 清晖 明月"),
        (
            "choosing supporting knowledge",
            "SELECT: p02\nREASON: 清晖意象与聪慧清朗契合",
        ),
        ("write a detailed description", DESIGN_REPLY),
        ("Check the objective descriptions", "APPROVE: yes\nFEEDBACK: ok"),
        ("You are the creative generator", GOOD_NAME_REPLY),
        ("Rate the explanation below against its requirement", "SCORE_COM: 3\nSCORE_CLA: 3\nFEEDBACK: ok"),
        ("Rate how well the explanation below fulfils", "SCORE_EXP: 3\nFEEDBACK: meets objective"),
    ]


def judge_rules() -> list[tuple[str, str]]:
    return [
        ("impartial judge scoring a creative result", "SCORE: 3"),
        ("impartial judge scoring the explanations", "SCORE_CRC: 3\nSCORE_LR: 3"),
        (
            "impartial auditor",
            "CLAIM_COUNT: 1\nCLAIM[1]: 山水含清晖 | 石壁精舍还湖中作",
        ),
    ]


SURNAMES = ["李", "王", "张", "刘", "陈", "杨", "赵", "黄", "周", "吴"]


def bench_query_dicts(n: int = 10) -> list[dict]:
    queries = []
    for i in range(n):
        surname = SURNAMES[i % len(SURNAMES)]
        queries.append(
            {
                "id": f"q{i + 1:02d}",
                "raw_text": f"{surname}姓宝宝，2024年{(i % 12) + 1}月出生，盼望聪慧清朗，名字出自诗词。",
                "surname": surname,
                "birth_datetime": f"2024-{(i % 12) + 1:02d}-15T08:30:00",
                "gender": "male" if i % 2 == 0 else "female",
                "weights": [2, 1, 1, 1, 1] if i == 0 else [1, 1, 1, 1, 1],
            }
        )
    return queries


def write_queries_file(path: Path, n: int = 10) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for q in bench_query_dicts(n):
            fh.write(json.dumps(q, ensure_ascii=False) + "\n")
    return path


def baseline_rules() -> list[tuple[str, str]]:
    """Method-specific replies for the prompting baselines; the markers key
    off each method's distinctive prompt feature."""

    def reply(name: str) -> str:
        lines = [f"NAME: {name}"]
        lines += [f"EXPLANATION[{k}]: 这是第{k}条解释。" for k in range(1, 6)]
        return "\n".join(lines)

    return [
        ("Answer the request below directly", "草拟：取清雅之名为宜。"),
        ("Retrieved knowledge:", reply("李引知")),
        ("Let's think step by step", reply("李思辨")),
        ("Take a deep breath", reply("李深呼")),
        ("Examples:", reply("李示例")),
        ("You are asked to complete a creative task", reply("李基础")),
    ]


@pytest.fixture
def ncb_query() -> UserQuery:
    return NCB_QUERY


@pytest.fixture
def fast_params() -> ThresholdParams:
    return ThresholdParams(retrieval=RetrievalParams(coarse_rounds=2, max_rounds=3, top_k=3))
