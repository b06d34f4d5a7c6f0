"""Benchmark harness: query sets, method registry, run logs, and reports.

A bench run executes one registered method per query, persists everything
as schema-versioned JSON-lines run logs, and a later judge/report pass turns
those logs into the metric table plus plot data (per-stage call counts and
per-round score traces). Reports computed from persisted logs and persisted
judge scores make zero backend calls, so replays are byte-identical.

Registered methods: ``base`` (task description plus raw query), ``cot`` and
``tdb`` (reasoning suffixes), ``fewshot`` (demonstration exemplars),
``q2kw`` (draft-then-retrieve), and ``namegen`` (the full pipeline). The
registry is open: third-party methods can register under new ids.
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .core import (
    CreativeOutput,
    Gender,
    NamegenError,
    ThresholdParams,
    UserQuery,
    WeightVector,
    normalize_weights,
)
from .corpus import Corpus, Embedder, VectorIndex
from .gateway import (
    CallLedger,
    CallStage,
    EVALUATOR_PARAMS,
    GENERATOR_PARAMS,
    Gateway,
    MANAGER_PARAMS,
    user,
)
from .agents import (
    DEFAULT_NCB_OBJECTIVES,
    PARSE_ATTEMPTS,
    AgentTeam,
    Envelope,
    Evaluator,
    Generator,
    Manager,
    ask_parsed,
    shots_block,
)
from .metrics import Judge, MethodReport, SampleScores, div, method_report
from .pipeline import PipelineDeps, PipelineOptions, PipelineResult, run_query
from .prompts import PromptLibrary, load_shots

logger = logging.getLogger(__name__)

RUN_LOG_SCHEMA = 1

COT_SUFFIX = "Let's think step by step"
TDB_PHRASE = "Take a deep breath and work on this problem step-by-step"


class BenchError(NamegenError):
    pass


class QueryLoadError(BenchError):
    pass


@dataclass(frozen=True, slots=True)
class BenchQuery:
    """One benchmark query with its annotated per-objective weights.

    The annotated weights feed report-side metrics only; the pipeline always
    estimates its own preference weights from the query text.
    """

    id: str
    query: UserQuery
    weights: WeightVector

    @property
    def objectives(self) -> tuple[str, ...]:
        return self.query.explicit_objectives or DEFAULT_NCB_OBJECTIVES


def load_queries(path: str | Path) -> list[BenchQuery]:
    """Load a JSON-lines query file; malformed lines and duplicate ids fail
    the load with their line numbers."""
    path = Path(path)
    try:
        raw_lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise QueryLoadError(f"cannot read query file {path}: {exc}") from exc

    queries: list[BenchQuery] = []
    problems: list[str] = []
    seen: set[str] = set()
    for lineno, line in enumerate(raw_lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            query_id = str(obj["id"])
            if query_id in seen:
                raise ValueError(f"duplicate query id {query_id!r}")
            birth = obj.get("birth_datetime")
            query = UserQuery(
                raw_text=str(obj["raw_text"]),
                surname=obj.get("surname"),
                birth_datetime=_dt.datetime.fromisoformat(birth) if birth else None,
                gender=Gender(obj["gender"]) if obj.get("gender") else None,
                explicit_objectives=(
                    tuple(str(o) for o in obj["objectives"])
                    if obj.get("objectives")
                    else None
                ),
                preference_hints=obj.get("preference_hints"),
            )
            weights = normalize_weights([float(w) for w in obj["weights"]])
            n_objectives = len(query.explicit_objectives or DEFAULT_NCB_OBJECTIVES)
            if len(weights) != n_objectives:
                raise ValueError(
                    f"{len(weights)} weights for {n_objectives} objectives"
                )
        except (KeyError, TypeError, ValueError, NamegenError) as exc:
            problems.append(f"line {lineno}: {exc}")
            continue
        seen.add(query_id)
        queries.append(BenchQuery(id=query_id, query=query, weights=weights))

    if problems:
        raise QueryLoadError(f"malformed query records in {path}: " + "; ".join(problems))
    if not queries:
        raise QueryLoadError(f"query file {path} contains no records")
    return queries


@dataclass(frozen=True, slots=True)
class RunLogEntry:
    """One (query, method) outcome, replayable from its JSON form."""

    query_id: str
    method: str
    backbone: str
    status: str  # ok | failed
    result: str | None
    explanations: tuple[str, ...]
    rounds: tuple[dict, ...]
    ledger: dict[str, int]
    started_at: str
    finished_at: str
    error: str | None = None

    def to_json(self) -> str:
        payload = {
            "schema": RUN_LOG_SCHEMA,
            "query_id": self.query_id,
            "method": self.method,
            "backbone": self.backbone,
            "status": self.status,
            "result": self.result,
            "explanations": list(self.explanations),
            "rounds": list(self.rounds),
            "ledger": self.ledger,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "error": self.error,
        }
        return json.dumps(payload, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RunLogEntry":
        obj = json.loads(line)
        if obj.get("schema") != RUN_LOG_SCHEMA:
            raise BenchError(f"unsupported run log schema {obj.get('schema')!r}")
        return cls(
            query_id=obj["query_id"],
            method=obj["method"],
            backbone=obj["backbone"],
            status=obj["status"],
            result=obj.get("result"),
            explanations=tuple(obj.get("explanations") or ()),
            rounds=tuple(obj.get("rounds") or ()),
            ledger=dict(obj.get("ledger") or {}),
            started_at=obj["started_at"],
            finished_at=obj["finished_at"],
            error=obj.get("error"),
        )


def load_run_log(path: str | Path) -> list[RunLogEntry]:
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            entries.append(RunLogEntry.from_json(line))
    return entries


@dataclass
class MethodContext:
    """Per-run resources shared by all queries; each query gets its own
    ledger so every backend call attributes to exactly one log entry."""

    transports: Mapping[str, object]  # role -> Transport
    prompts: PromptLibrary
    corpus: Corpus
    index: VectorIndex
    embedder: Embedder
    params: ThresholdParams
    options: PipelineOptions
    backbone: str = "mock"
    decoding: Mapping[str, object] | None = None  # role -> DecodingParams

    def gateway(self, role: str, ledger: CallLedger) -> Gateway:
        return Gateway(transport=self.transports[role], ledger=ledger)

    def role_params(self, role: str):
        if self.decoding and role in self.decoding:
            return self.decoding[role]
        return None


@dataclass(frozen=True, slots=True)
class MethodOutcome:
    output: CreativeOutput
    rounds: tuple[dict, ...]
    ledger: dict[str, int]


MethodFn = Callable[[BenchQuery, MethodContext], MethodOutcome]

_REGISTRY: dict[str, MethodFn] = {}


def register_method(name: str) -> Callable[[MethodFn], MethodFn]:
    def deco(fn: MethodFn) -> MethodFn:
        _REGISTRY[name] = fn
        return fn

    return deco


def registered_methods() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def get_method(name: str) -> MethodFn:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise BenchError(
            f"unregistered method {name!r}; known: {registered_methods()}"
        ) from None


def _round_trace_dicts(result: PipelineResult) -> tuple[dict, ...]:
    rounds = []
    for trace in result.optimization.rounds:
        record = trace.record
        rounds.append(
            {
                "round": record.round,
                "flag": record.regen_flag.value,
                "theta_imp": record.theta_imp,
                "theta_exp": record.theta_exp,
                "psi_imp": record.psi_imp,
                "psi_exp": record.psi_exp,
                "feedback": list(record.feedback),
                "ledger": trace.ledger,
            }
        )
    return tuple(rounds)


def baseline_prompt(
    bench_query: BenchQuery,
    task_type: str,
    extra: str = "",
) -> str:
    """The shared single-call prompt for the prompting baselines."""
    objectives = "\n".join(
        f"{k}. {label}" for k, label in enumerate(bench_query.objectives, start=1)
    )
    prompts = PromptLibrary()
    return prompts.render(
        "baseline_base",
        task_type=task_type,
        extra=extra,
        objectives=objectives,
        query=bench_query.query.raw_text,
    )


def _parse_named_output(text: str, m: int) -> CreativeOutput:
    env = Envelope.parse(text)
    return CreativeOutput(
        result=env.require("NAME"), explanations=env.require_indexed("EXPLANATION", m)
    )


def _single_call_method(
    bench_query: BenchQuery, ctx: MethodContext, prompt: str
) -> MethodOutcome:
    ledger = CallLedger()
    gateway = ctx.gateway("generator", ledger)
    params = ctx.role_params("generator") or GENERATOR_PARAMS
    m = len(bench_query.objectives)
    output = ask_parsed(
        gateway,
        prompt,
        params,
        CallStage.GENERATION,
        lambda text: _parse_named_output(text, m),
        PARSE_ATTEMPTS,
    )
    return MethodOutcome(output=output, rounds=(), ledger=ledger.snapshot())


_TASK_TYPE_NCB = "naming a Chinese baby"


@register_method("base")
def method_base(bench_query: BenchQuery, ctx: MethodContext) -> MethodOutcome:
    prompt = baseline_prompt(bench_query, ctx.options.task_type or _TASK_TYPE_NCB)
    return _single_call_method(bench_query, ctx, prompt)


@register_method("cot")
def method_cot(bench_query: BenchQuery, ctx: MethodContext) -> MethodOutcome:
    prompt = (
        baseline_prompt(bench_query, ctx.options.task_type or _TASK_TYPE_NCB).rstrip()
        + "\n\n"
        + COT_SUFFIX
    )
    return _single_call_method(bench_query, ctx, prompt)


@register_method("tdb")
def method_tdb(bench_query: BenchQuery, ctx: MethodContext) -> MethodOutcome:
    prompt = (
        TDB_PHRASE
        + ".\n\n"
        + baseline_prompt(bench_query, ctx.options.task_type or _TASK_TYPE_NCB)
    )
    return _single_call_method(bench_query, ctx, prompt)


@register_method("fewshot")
def method_fewshot(bench_query: BenchQuery, ctx: MethodContext) -> MethodOutcome:
    shots = load_shots(ctx.options.shots, ctx.options.shots_path)
    prompt = baseline_prompt(
        bench_query, ctx.options.task_type or _TASK_TYPE_NCB, extra=shots_block(shots)
    )
    return _single_call_method(bench_query, ctx, prompt)


@register_method("q2kw")
def method_q2kw(bench_query: BenchQuery, ctx: MethodContext) -> MethodOutcome:
    """Draft an answer from the raw query, retrieve with query plus draft,
    and prepend the retrieved knowledge to the base prompt."""
    ledger = CallLedger()
    gateway = ctx.gateway("generator", ledger)
    gen_params = ctx.role_params("generator") or GENERATOR_PARAMS
    draft_prompt = ctx.prompts.render(
        "baseline_draft", query=bench_query.query.raw_text
    )
    draft = gateway.complete([user(draft_prompt)], gen_params, stage=CallStage.RETRIEVAL)

    query_vec = ctx.embedder.embed(bench_query.query.raw_text + "\n" + draft)
    ranked = ctx.index.top_k(query_vec, k=1)
    knowledge_lines = []
    for rid, _score in ranked:
        record = ctx.corpus.get(rid)
        if record is not None:
            knowledge_lines.append(
                f"《{record.title}》 - {record.poet}: " + " / ".join(record.content)
            )
    extra = (
        "\nRetrieved knowledge:\n" + "\n".join(knowledge_lines) + "\n"
        if knowledge_lines
        else ""
    )

    prompt = baseline_prompt(
        bench_query, ctx.options.task_type or _TASK_TYPE_NCB, extra=extra
    )
    m = len(bench_query.objectives)
    output = ask_parsed(
        gateway,
        prompt,
        gen_params,
        CallStage.GENERATION,
        lambda text: _parse_named_output(text, m),
        PARSE_ATTEMPTS,
    )
    return MethodOutcome(output=output, rounds=(), ledger=ledger.snapshot())


@register_method("namegen")
def method_namegen(bench_query: BenchQuery, ctx: MethodContext) -> MethodOutcome:
    ledger = CallLedger()
    team = AgentTeam(
        manager=Manager(
            ctx.gateway("manager", ledger),
            ctx.prompts,
            ctx.role_params("manager") or MANAGER_PARAMS,
        ),
        generator=Generator(
            ctx.gateway("generator", ledger),
            ctx.prompts,
            ctx.role_params("generator") or GENERATOR_PARAMS,
        ),
        evaluator=Evaluator(
            ctx.gateway("evaluator", ledger),
            ctx.prompts,
            ctx.role_params("evaluator") or EVALUATOR_PARAMS,
        ),
    )
    deps = PipelineDeps(
        team=team,
        prompts=ctx.prompts,
        corpus=ctx.corpus,
        index=ctx.index,
        embedder=ctx.embedder,
        params=ctx.params,
        options=ctx.options,
    )
    result = run_query(bench_query.query, deps)
    return MethodOutcome(
        output=result.optimization.output,
        rounds=_round_trace_dicts(result),
        ledger=result.ledger,
    )


def _utcnow() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def run_method(
    method: str,
    queries: Sequence[BenchQuery],
    ctx: MethodContext,
    log_path: str | Path | None = None,
    workers: int = 1,
) -> list[RunLogEntry]:
    """Run one method over the query set, recording one log entry per query.

    Per-query failures are captured as failed entries and the run continues.
    Log writes are serialized through a single appender; determinism is only
    guaranteed with mock backends and one worker.
    """
    fn = get_method(method)
    write_lock = threading.Lock()
    log_file = Path(log_path).open("a", encoding="utf-8") if log_path else None

    def run_one(bench_query: BenchQuery) -> RunLogEntry:
        started = _utcnow()
        try:
            outcome = fn(bench_query, ctx)
            entry = RunLogEntry(
                query_id=bench_query.id,
                method=method,
                backbone=ctx.backbone,
                status="ok",
                result=outcome.output.result,
                explanations=outcome.output.explanations,
                rounds=outcome.rounds,
                ledger=outcome.ledger,
                started_at=started,
                finished_at=_utcnow(),
            )
        except NamegenError as exc:
            logger.warning("query %s failed under %s: %s", bench_query.id, method, exc)
            entry = RunLogEntry(
                query_id=bench_query.id,
                method=method,
                backbone=ctx.backbone,
                status="failed",
                result=None,
                explanations=(),
                rounds=(),
                ledger={},
                started_at=started,
                finished_at=_utcnow(),
                error=str(exc),
            )
        if log_file is not None:
            with write_lock:
                log_file.write(entry.to_json() + "\n")
                log_file.flush()
        return entry

    try:
        if workers <= 1:
            return [run_one(q) for q in queries]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_one, queries))
    finally:
        if log_file is not None:
            log_file.close()


# --- judging and reporting ---


def judge_entries(
    entries: Sequence[RunLogEntry],
    queries: Sequence[BenchQuery],
    judge: Judge,
    corpus: Corpus | None = None,
    scores_path: str | Path | None = None,
) -> list[SampleScores]:
    """Score every successful run-log entry with the judge backend and
    optionally persist the scores for replayable reporting."""
    by_id = {q.id: q for q in queries}
    scores: list[SampleScores] = []
    skipped = 0
    for entry in entries:
        if entry.status != "ok" or entry.result is None:
            skipped += 1
            continue
        bench_query = by_id.get(entry.query_id)
        if bench_query is None:
            raise BenchError(f"run log references unknown query id {entry.query_id!r}")
        sample = judge.score_sample(
            sample_id=f"{entry.method}:{entry.query_id}",
            result=entry.result,
            explanations=entry.explanations,
            objectives=bench_query.objectives,
            weights=tuple(bench_query.weights),
            corpus=corpus,
        )
        if sample is None:
            skipped += 1
            continue
        scores.append(sample)
    if skipped:
        logger.warning("%d entries excluded from judging", skipped)
    if scores_path is not None:
        with Path(scores_path).open("w", encoding="utf-8") as fh:
            for sample in sorted(scores, key=lambda s: s.sample_id):
                fh.write(
                    json.dumps(
                        {
                            "sample_id": sample.sample_id,
                            "explicit": list(sample.explicit),
                            "weights": list(sample.weights),
                            "acc": sample.acc,
                            "crc": sample.crc,
                            "lr": sample.lr,
                        },
                        ensure_ascii=False,
                        sort_keys=True,
                    )
                    + "\n"
                )
    return scores


def load_scores(path: str | Path) -> list[SampleScores]:
    scores = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        scores.append(
            SampleScores(
                sample_id=obj["sample_id"],
                explicit=tuple(obj["explicit"]),
                weights=tuple(obj["weights"]),
                acc=obj["acc"],
                crc=obj["crc"],
                lr=obj["lr"],
            )
        )
    return scores


METRICS_COLUMNS = (
    "method,backbone,EC,EC_std,ACC,CRC,LR,IC,IC_std,CC,CC_std,DIV"
)


def _fmt(value: float | None) -> str:
    return "NA" if value is None else f"{value:.2f}"


@dataclass(frozen=True, slots=True)
class BenchReport:
    reports: tuple[MethodReport, ...]
    metrics_csv: str
    calls_csv: str
    traces_csv: str


def report(
    entries: Sequence[RunLogEntry],
    scores: Sequence[SampleScores] | None = None,
    out_dir: str | Path | None = None,
) -> BenchReport:
    """Build the metric table and plot data from run logs and judge scores.

    Without scores the judge-derived columns are marked unavailable; the
    diversity column and the call/trace files never need a backend. Rows are
    ordered by (method, backbone) and formatting is fixed, so identical
    inputs produce byte-identical files.
    """
    if not entries:
        raise BenchError("at least one run log entry is required")

    keys = sorted({(e.method, e.backbone) for e in entries})
    ok_entries = [e for e in entries if e.status == "ok" and e.result is not None]

    div_scores: dict[str, float] = {}
    methods = sorted({m for m, _ in keys})
    if len(methods) >= 2:
        common_ids = None
        results_by_method: dict[str, dict[str, str]] = {}
        for method in methods:
            per = {e.query_id: e.result or "" for e in ok_entries if e.method == method}
            results_by_method[method] = per
            common_ids = set(per) if common_ids is None else common_ids & set(per)
        common_ids = common_ids or set()
        if common_ids:
            trimmed = {
                m: {qid: r for qid, r in per.items() if qid in common_ids}
                for m, per in results_by_method.items()
            }
            div_scores = div(trimmed)

    scores_by_key: dict[tuple[str, str], list[SampleScores]] = {}
    if scores:
        method_of = {f"{e.method}:{e.query_id}": (e.method, e.backbone) for e in entries}
        for sample in scores:
            key = method_of.get(sample.sample_id)
            if key is not None:
                scores_by_key.setdefault(key, []).append(sample)

    metrics_lines = [METRICS_COLUMNS]
    reports: list[MethodReport] = []
    for method, backbone in keys:
        samples = sorted(
            scores_by_key.get((method, backbone), []), key=lambda s: s.sample_id
        )
        div_value = div_scores.get(method)
        if samples:
            row = method_report(method, backbone, samples, div_value or 0.0)
            reports.append(row)
            metrics_lines.append(
                ",".join(
                    [
                        method,
                        backbone,
                        _fmt(row.ec),
                        _fmt(row.ec_std),
                        _fmt(row.acc),
                        _fmt(row.crc),
                        _fmt(row.lr),
                        _fmt(row.ic),
                        _fmt(row.ic_std),
                        _fmt(row.cc),
                        _fmt(row.cc_std),
                        _fmt(div_value) if div_value is not None else "NA",
                    ]
                )
            )
        else:
            metrics_lines.append(
                ",".join(
                    [method, backbone]
                    + ["NA"] * 9
                    + [_fmt(div_value) if div_value is not None else "NA"]
                )
            )

    calls_lines = [
        "query_id,method,preparation,retrieval,generation,implicit_eval,explicit_eval,total"
    ]
    for entry in sorted(ok_entries, key=lambda e: (e.method, e.query_id)):
        ledger = entry.ledger
        calls_lines.append(
            ",".join(
                [
                    entry.query_id,
                    entry.method,
                    str(ledger.get("preparation", 0)),
                    str(ledger.get("retrieval", 0)),
                    str(ledger.get("generation", 0)),
                    str(ledger.get("implicit_eval", 0)),
                    str(ledger.get("explicit_eval", 0)),
                    str(ledger.get("total", 0)),
                ]
            )
        )

    traces_lines = ["query_id,method,round,flag,theta_imp,theta_exp,psi_imp,psi_exp"]
    for entry in sorted(ok_entries, key=lambda e: (e.method, e.query_id)):
        for round_info in entry.rounds:
            traces_lines.append(
                ",".join(
                    [
                        entry.query_id,
                        entry.method,
                        str(round_info.get("round")),
                        str(round_info.get("flag")),
                        _fmt_value(round_info.get("theta_imp")),
                        _fmt_value(round_info.get("theta_exp")),
                        _fmt_value(round_info.get("psi_imp")),
                        _fmt_value(round_info.get("psi_exp")),
                    ]
                )
            )

    result = BenchReport(
        reports=tuple(reports),
        metrics_csv="\n".join(metrics_lines) + "\n",
        calls_csv="\n".join(calls_lines) + "\n",
        traces_csv="\n".join(traces_lines) + "\n",
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(result.metrics_csv, encoding="utf-8")
        (out / "calls_kde.csv").write_text(result.calls_csv, encoding="utf-8")
        (out / "traces.csv").write_text(result.traces_csv, encoding="utf-8")
    return result


def _fmt_value(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"
