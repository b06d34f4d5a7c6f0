#!/usr/bin/env python3
"""Offline benchmark demo: bench -> judge -> report over scripted backends.

Materializes a small corpus, a 10-query set, mock scripts, and a config in
the chosen working directory, then drives the CLI end to end. The resulting
metrics.csv, calls_kde.csv, and traces.csv land in <workdir>/report.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from conftest import (  # noqa: E402
    baseline_rules,
    happy_rules,
    judge_rules,
    write_corpus_file,
    write_queries_file,
)
from namegen.cli import main as cli_main  # noqa: E402


def materialize(workdir: Path) -> Path:
    workdir.mkdir(parents=True, exist_ok=True)
    corpus = write_corpus_file(workdir / "poems.jsonl")
    write_queries_file(workdir / "queries.jsonl")
    rules = workdir / "rules.yaml"
    rules.write_text(
        yaml.safe_dump(
            [
                {"match": m, "reply": r}
                for m, r in happy_rules() + baseline_rules() + judge_rules()
            ],
            allow_unicode=True,
            sort_keys=False,
        ),
        encoding="utf-8",
    )
    config = workdir / "config.yaml"
    config.write_text(
        yaml.safe_dump(
            {
                "providers": {
                    role: {"kind": "mock", "script": str(rules)}
                    for role in ("manager", "generator", "evaluator", "judge")
                },
                "paths": {
                    "corpus": str(corpus),
                    "transcripts": str(workdir / "runs"),
                },
                "bench": {"workers": 1},
            },
            sort_keys=False,
        ),
        encoding="utf-8",
    )
    return config


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="bench_demo")
    parser.add_argument("--methods", default="base,cot,tdb,fewshot,q2kw,namegen")
    args = parser.parse_args()

    workdir = Path(args.workdir)
    config = materialize(workdir)
    log = workdir / "runlog.jsonl"
    scores = workdir / "scores.jsonl"
    if log.exists():
        log.unlink()

    steps = [
        [
            "bench",
            "--config", str(config),
            "--queries", str(workdir / "queries.jsonl"),
            "--methods", args.methods,
            "--out", str(log),
        ],
        [
            "judge",
            "--config", str(config),
            "--runlog", str(log),
            "--queries", str(workdir / "queries.jsonl"),
            "--out", str(scores),
        ],
        [
            "report",
            "--runlog", str(log),
            "--scores", str(scores),
            "--out-dir", str(workdir / "report"),
        ],
    ]
    for step in steps:
        code = cli_main(step)
        if code != 0:
            return code

    print()
    print((workdir / "report" / "metrics.csv").read_text(encoding="utf-8"))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
