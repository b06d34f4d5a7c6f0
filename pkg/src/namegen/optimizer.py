"""Dynamic iterative optimization loop.

Each round generates a candidate, gates it through the rule-based accuracy
check, scores the explanations implicitly (completeness, clarity) and then
explicitly (per user objective), and compares the combined scores against a
decaying acceptance threshold. Rejected candidates land in a history; when
the round budget runs out, the best historical candidate wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .core import (
    CreativeOutput,
    EvalRecord,
    HybridInfo,
    NamegenError,
    RegenFlag,
    ThresholdParams,
    UserQuery,
    WeightVector,
)
from .corpus import Corpus
from .agents import AgentTeam, GenerationError, ScoringError
from .verification import Rule, f_acc


class OptimizationFailedError(NamegenError):
    """The round budget ran out with nothing usable in either history."""


def acceptance_threshold(round_no: int, params: ThresholdParams) -> float:
    """The acceptance bar for evaluation round ``round_no``.

    Holds at delta through the warmup rounds, then decays as
    delta / (alpha * ln(round_no + warmup)).
    """
    if round_no < 1:
        raise ValueError("round_no starts at 1")
    if round_no <= params.warmup:
        return params.delta
    return params.delta / (params.alpha * math.log(round_no + params.warmup))


def implicit_score(s_com: Sequence[int], s_cla: Sequence[int]) -> float:
    """Combine per-explanation completeness and clarity rubric scores into
    one value on [0, 1]: equal-weight average of the two normalized means."""
    if not s_com or len(s_com) != len(s_cla):
        raise ValueError("score lists must be non-empty and equal length")
    avg_com = sum(s_com) / len(s_com)
    avg_cla = sum(s_cla) / len(s_cla)
    return 0.5 * (avg_com / 3.0) + 0.5 * (avg_cla / 3.0)


def explicit_score(s_exp: Sequence[int], weights: WeightVector) -> float:
    """Preference-weighted mean of normalized per-objective rubric scores."""
    if len(s_exp) != len(weights):
        raise ValueError("score list must align with the weight vector")
    return sum(w * (s / 3.0) for w, s in zip(weights, s_exp))


@dataclass(frozen=True, slots=True)
class HistoryEntry:
    round: int
    output: CreativeOutput
    theta: float | None


@dataclass(slots=True)
class History:
    """Append-only record of rejected candidates for one score kind."""

    kind: str
    entries: list[HistoryEntry] = field(default_factory=list)

    def append(self, round_no: int, output: CreativeOutput, theta: float | None) -> None:
        self.entries.append(HistoryEntry(round_no, output, theta))

    def best(self) -> HistoryEntry | None:
        """Highest theta wins; scoreless entries rank last; ties go to the
        earliest round."""
        if not self.entries:
            return None
        return max(
            self.entries,
            key=lambda e: (e.theta is not None, e.theta or 0.0, -e.round),
        )


@dataclass(frozen=True, slots=True)
class RoundTrace:
    record: EvalRecord
    ledger: dict[str, int]


@dataclass(frozen=True, slots=True)
class OptimizationResult:
    output: CreativeOutput
    accepted: bool
    fallback_kind: str | None
    rounds: tuple[RoundTrace, ...]
    implicit_history: History
    explicit_history: History

    @property
    def total_rounds(self) -> int:
        return len(self.rounds)


def optimize(
    query: UserQuery,
    info: HybridInfo,
    params: ThresholdParams,
    team: AgentTeam,
    corpus: Corpus | None = None,
    rules: dict[str, Rule] | None = None,
) -> OptimizationResult:
    """Run the generate/evaluate/regenerate loop.

    Counter discipline: the generation round counter advances on every
    generated candidate (including failed parses); the implicit and explicit
    evaluation counters advance only on completed scoring passes, and each
    threshold is computed at its own counter's current value.
    """
    h_imp = History(kind="implicit")
    h_exp = History(kind="explicit")
    traces: list[RoundTrace] = []
    j_imp = 0
    j_exp = 0
    regen = RegenFlag.UNSET
    feedback: tuple[str, ...] = ()
    previous: str | None = None

    def trace(record: EvalRecord) -> None:
        traces.append(RoundTrace(record=record, ledger=team.generator.gateway.ledger.snapshot()))

    for j in range(1, params.max_rounds + 1):
        try:
            output = team.generator.generate(
                query=query,
                task_type=info.task_type,
                knowledge=info.retrieved_knowledge,
                descriptions=info.descriptions,
                requirements=info.requirements,
                shots=info.shots,
                regen_flag=regen,
                feedback=feedback,
                previous=previous,
            )
        except GenerationError as exc:
            trace(
                EvalRecord(
                    round=j,
                    regen_flag=RegenFlag.REGENERATE,
                    feedback=(f"generation failed: {exc}",),
                )
            )
            regen = RegenFlag.REGENERATE
            continue

        round_feedback: list[str] = []

        # Accuracy gate: deterministic, no backend calls.
        flag, report = f_acc(output, info.retrieved_knowledge, query, corpus, rules)
        if flag is RegenFlag.REGENERATE:
            round_feedback.extend(v.detail for v in report.violations)
            h_imp.append(j, output, None)
            trace(
                EvalRecord(
                    round=j,
                    regen_flag=RegenFlag.REGENERATE,
                    feedback=tuple(round_feedback),
                )
            )
            regen, feedback, previous = RegenFlag.REGENERATE, tuple(round_feedback), output.result
            continue

        # Implicit pass: completeness and clarity per explanation.
        try:
            s_com: list[int] = []
            s_cla: list[int] = []
            for explanation, requirement in zip(output.explanations, info.requirements):
                com, cla, fb = team.evaluator.score_implicit(
                    explanation, requirement, info.task_type
                )
                s_com.append(com)
                s_cla.append(cla)
                if fb:
                    round_feedback.append(fb)
        except ScoringError as exc:
            h_imp.append(j, output, None)
            trace(
                EvalRecord(
                    round=j,
                    regen_flag=RegenFlag.REGENERATE,
                    feedback=(f"implicit scoring failed: {exc}",),
                )
            )
            regen, feedback, previous = (
                RegenFlag.REGENERATE,
                (f"implicit scoring failed: {exc}",),
                output.result,
            )
            continue
        j_imp += 1
        theta_imp = implicit_score(s_com, s_cla)
        psi_imp = acceptance_threshold(j_imp, params)
        if theta_imp < psi_imp:
            h_imp.append(j, output, theta_imp)
            trace(
                EvalRecord(
                    round=j,
                    regen_flag=RegenFlag.REGENERATE,
                    theta_imp=theta_imp,
                    psi_imp=psi_imp,
                    score_vectors={"completeness": tuple(s_com), "clarity": tuple(s_cla)},
                    feedback=tuple(round_feedback),
                )
            )
            regen, feedback, previous = RegenFlag.REGENERATE, tuple(round_feedback), output.result
            continue

        # Explicit pass: one score per user objective.
        try:
            s_exp: list[int] = []
            for explanation, desc, req in zip(
                output.explanations, info.descriptions, info.requirements
            ):
                score, fb = team.evaluator.score_explicit(
                    explanation, desc, req, info.retrieved_knowledge
                )
                s_exp.append(score)
                if fb:
                    round_feedback.append(fb)
        except ScoringError as exc:
            h_exp.append(j, output, None)
            trace(
                EvalRecord(
                    round=j,
                    regen_flag=RegenFlag.REGENERATE,
                    theta_imp=theta_imp,
                    psi_imp=psi_imp,
                    feedback=(f"explicit scoring failed: {exc}",),
                )
            )
            regen, feedback, previous = (
                RegenFlag.REGENERATE,
                (f"explicit scoring failed: {exc}",),
                output.result,
            )
            continue
        j_exp += 1
        theta_exp = explicit_score(s_exp, info.preference)
        psi_exp = acceptance_threshold(j_exp, params)
        score_vectors = {
            "completeness": tuple(s_com),
            "clarity": tuple(s_cla),
            "explicit": tuple(s_exp),
        }
        if theta_exp < psi_exp:
            h_exp.append(j, output, theta_exp)
            trace(
                EvalRecord(
                    round=j,
                    regen_flag=RegenFlag.REGENERATE,
                    theta_imp=theta_imp,
                    theta_exp=theta_exp,
                    psi_imp=psi_imp,
                    psi_exp=psi_exp,
                    score_vectors=score_vectors,
                    feedback=tuple(round_feedback),
                )
            )
            regen, feedback, previous = RegenFlag.REGENERATE, tuple(round_feedback), output.result
            continue

        trace(
            EvalRecord(
                round=j,
                regen_flag=RegenFlag.ACCEPT,
                theta_imp=theta_imp,
                theta_exp=theta_exp,
                psi_imp=psi_imp,
                psi_exp=psi_exp,
                score_vectors=score_vectors,
                feedback=tuple(round_feedback),
            )
        )
        return OptimizationResult(
            output=output,
            accepted=True,
            fallback_kind=None,
            rounds=tuple(traces),
            implicit_history=h_imp,
            explicit_history=h_exp,
        )

    # Round budget exhausted: fall back to the best rejected candidate,
    # preferring those that at least completed explicit scoring.
    for history, kind in ((h_exp, "explicit"), (h_imp, "implicit")):
        entry = history.best()
        if entry is not None:
            return OptimizationResult(
                output=entry.output,
                accepted=False,
                fallback_kind=kind,
                rounds=tuple(traces),
                implicit_history=h_imp,
                explicit_history=h_exp,
            )
    raise OptimizationFailedError(
        f"no candidate survived any stage within {params.max_rounds} rounds"
    )
