"""Command-line surface.

Subcommands: ``index`` (build a vector index), ``run`` (one query through
the full pipeline), ``bench`` (run methods over a query set), ``judge``
(score run logs with the judge backend), and ``report`` (emit metric and
plot files from logs plus scores).

Exit codes: 0 success, 1 runtime failure, 2 input error, 3 config error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import sys
from pathlib import Path

from . import bench as bench_mod
from .config import Config, ConfigError, build_embedder, build_team, build_transport, load_config
from .core import NamegenError, UserQuery
from .corpus import CorpusError, HashNgramEmbedder, VectorIndex, build_index, ingest
from .gateway import CallLedger, Gateway
from .metrics import Judge
from .pipeline import PipelineDeps, run_query
from .prompts import PromptLibrary

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INPUT = 2
EXIT_CONFIG = 3

#: Shape of the machine-readable `run --json` output.
RUN_OUTPUT_SCHEMA = {
    "type": "object",
    "required": ["result", "explanations", "transcript", "ledger"],
    "properties": {
        "result": {"type": "string", "minLength": 1},
        "explanations": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "transcript": {"type": "string"},
        "ledger": {
            "type": "object",
            "required": ["total"],
            "additionalProperties": {"type": "integer"},
        },
        "accepted": {"type": "boolean"},
        "rounds": {"type": "integer"},
    },
}


class InputError(NamegenError):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="namegen",
        description="Multi-objective creative naming pipeline and benchmark tools",
    )
    parser.add_argument("--seed", type=int, default=None, help="seed for test embedders")
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="build a vector index from a corpus file")
    p_index.add_argument("--corpus", required=True)
    p_index.add_argument("--out", required=True)
    p_index.add_argument("--embedder", default="hash-ngram", choices=["hash-ngram"])
    p_index.add_argument("--dim", type=int, default=256)

    p_run = sub.add_parser("run", help="run one query through the full pipeline")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--query", help="query text")
    p_run.add_argument("--query-file", help="JSON file with one query object")
    p_run.add_argument("--json", action="store_true", dest="as_json")

    p_bench = sub.add_parser("bench", help="run methods over a query set")
    p_bench.add_argument("--config", required=True)
    p_bench.add_argument("--queries", required=True)
    p_bench.add_argument("--methods", required=True, help="comma-separated method ids")
    p_bench.add_argument("--out", required=True, help="run log JSONL path")
    p_bench.add_argument("--workers", type=int, default=None)

    p_judge = sub.add_parser("judge", help="score run logs with the judge backend")
    p_judge.add_argument("--config", required=True)
    p_judge.add_argument("--runlog", required=True)
    p_judge.add_argument("--queries", required=True)
    p_judge.add_argument("--out", required=True, help="scores JSONL path")

    p_report = sub.add_parser("report", help="emit metrics.csv and plot data")
    p_report.add_argument("--runlog", required=True)
    p_report.add_argument("--scores", help="scores JSONL from the judge command")
    p_report.add_argument("--out-dir", required=True)

    return parser


def _require_file(path: str, label: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{label} not found: {path}")
    return p


def cmd_index(args: argparse.Namespace) -> int:
    corpus = ingest(_require_file(args.corpus, "corpus file"))
    for warning in corpus.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    embedder = HashNgramEmbedder(dim=args.dim, seed=args.seed or 0)
    index = build_index(corpus, embedder)
    index.save(args.out)
    print(f"indexed {len(index.ids)} records -> {args.out}")
    return EXIT_OK


def _load_query_arg(args: argparse.Namespace) -> UserQuery:
    if args.query:
        return UserQuery(raw_text=args.query)
    if args.query_file:
        obj = json.loads(_require_file(args.query_file, "query file").read_text("utf-8"))
        from .core import Gender

        birth = obj.get("birth_datetime")
        return UserQuery(
            raw_text=obj["raw_text"],
            surname=obj.get("surname"),
            birth_datetime=_dt.datetime.fromisoformat(birth) if birth else None,
            gender=Gender(obj["gender"]) if obj.get("gender") else None,
            explicit_objectives=(
                tuple(obj["objectives"]) if obj.get("objectives") else None
            ),
            preference_hints=obj.get("preference_hints"),
        )
    raise InputError("provide --query or --query-file")


def _pipeline_deps(config: Config, seed: int | None = None) -> PipelineDeps:
    if not config.paths.corpus:
        raise ConfigError("paths.corpus is required for this command")
    corpus = ingest(config.paths.corpus)
    embedder = build_embedder(config, seed=seed)
    if config.paths.index:
        index = VectorIndex.load(config.paths.index)
        if index.fingerprint != embedder.fingerprint:
            raise ConfigError(
                "index was built with a different embedding provider: "
                f"{index.fingerprint} vs {embedder.fingerprint}"
            )
    else:
        index = build_index(corpus, embedder)
    prompts = PromptLibrary(config.paths.prompt_dir)
    team = build_team(config, prompts)
    return PipelineDeps(
        team=team,
        prompts=prompts,
        corpus=corpus,
        index=index,
        embedder=embedder,
        params=config.thresholds,
        options=config.pipeline,
        rules_for_task=config.rules_for_task,
    )


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(_require_file(args.config, "config file"))
    query = _load_query_arg(args)
    deps = _pipeline_deps(config, seed=args.seed)
    result = run_query(query, deps)

    transcript_dir = Path(config.paths.transcripts)
    transcript_dir.mkdir(parents=True, exist_ok=True)
    digest = hashlib.sha256(query.raw_text.encode("utf-8")).hexdigest()[:16]
    transcript_path = transcript_dir / f"run-{digest}.json"
    output = result.optimization.output
    transcript = {
        "query": query.raw_text,
        "result": output.result,
        "explanations": list(output.explanations),
        "accepted": result.optimization.accepted,
        "fallback": result.optimization.fallback_kind,
        "rounds": [
            {
                "round": t.record.round,
                "flag": t.record.regen_flag.value,
                "theta_imp": t.record.theta_imp,
                "theta_exp": t.record.theta_exp,
                "psi_imp": t.record.psi_imp,
                "psi_exp": t.record.psi_exp,
                "feedback": list(t.record.feedback),
                "ledger": t.ledger,
            }
            for t in result.optimization.rounds
        ],
        "ledger": result.ledger,
        "warnings": list(result.preparation.warnings),
    }
    transcript_path.write_text(
        json.dumps(transcript, ensure_ascii=False, sort_keys=True, indent=2),
        encoding="utf-8",
    )

    if args.as_json:
        print(
            json.dumps(
                {
                    "result": output.result,
                    "explanations": list(output.explanations),
                    "transcript": str(transcript_path),
                    "ledger": result.ledger,
                    "accepted": result.optimization.accepted,
                    "rounds": len(result.optimization.rounds),
                },
                ensure_ascii=False,
                sort_keys=True,
            )
        )
    else:
        print(f"result: {output.result}")
        for k, explanation in enumerate(output.explanations, start=1):
            print(f"explanation {k}: {explanation}")
        print(f"transcript: {transcript_path}")
        print(f"backend calls: {result.ledger['total']}")
    return EXIT_OK


def _method_context(config: Config, seed: int | None = None) -> bench_mod.MethodContext:
    deps = _pipeline_deps(config, seed=seed)
    transports = {
        role: build_transport(config.provider(role))
        for role in ("manager", "generator", "evaluator")
    }
    decoding = {
        role: config.provider(role).decoding(role)
        for role in ("manager", "generator", "evaluator")
    }
    return bench_mod.MethodContext(
        transports=transports,
        prompts=deps.prompts,
        corpus=deps.corpus,
        index=deps.index,
        embedder=deps.embedder,
        params=config.thresholds,
        options=config.pipeline,
        backbone=config.provider("generator").model,
        decoding=decoding,
    )


def cmd_bench(args: argparse.Namespace) -> int:
    config = load_config(_require_file(args.config, "config file"))
    queries = bench_mod.load_queries(_require_file(args.queries, "query file"))
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise InputError("no methods given")
    for method in methods:
        bench_mod.get_method(method)
    ctx = _method_context(config, seed=args.seed)
    workers = args.workers if args.workers is not None else config.workers
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    total = 0
    for method in methods:
        entries = bench_mod.run_method(method, queries, ctx, log_path=out, workers=workers)
        ok = sum(1 for e in entries if e.status == "ok")
        total += len(entries)
        print(f"{method}: {ok}/{len(entries)} ok")
    print(f"wrote {total} log entries -> {out}")
    return EXIT_OK


def cmd_judge(args: argparse.Namespace) -> int:
    config = load_config(_require_file(args.config, "config file"))
    entries = bench_mod.load_run_log(_require_file(args.runlog, "run log"))
    queries = bench_mod.load_queries(_require_file(args.queries, "query file"))
    corpus = ingest(config.paths.corpus) if config.paths.corpus else None
    judge_cfg = config.provider("judge")
    judge = Judge(
        gateway=Gateway(transport=build_transport(judge_cfg), ledger=CallLedger()),
        prompts=PromptLibrary(config.paths.prompt_dir),
        params=judge_cfg.decoding("judge"),
    )
    scores = bench_mod.judge_entries(
        entries, queries, judge, corpus=corpus, scores_path=args.out
    )
    print(f"judged {len(scores)} samples -> {args.out}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    entries = bench_mod.load_run_log(_require_file(args.runlog, "run log"))
    scores = (
        bench_mod.load_scores(_require_file(args.scores, "scores file"))
        if args.scores
        else None
    )
    result = bench_mod.report(entries, scores=scores, out_dir=args.out_dir)
    print(f"wrote metrics.csv, calls_kde.csv, traces.csv -> {args.out_dir}")
    if scores is None:
        print("note: no scores file given; judge-derived columns are NA", file=sys.stderr)
    for row in result.reports:
        print(f"{row.method}/{row.backbone}: CC {row.cc:.2f}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "index": cmd_index,
        "run": cmd_run,
        "bench": cmd_bench,
        "judge": cmd_judge,
        "report": cmd_report,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, CorpusError, bench_mod.QueryLoadError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NamegenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
