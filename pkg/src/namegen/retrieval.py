"""Evaluator-guided iterative knowledge retrieval.

Each round narrows the corpus (coarse metadata filter during the early
rounds, history exclusion always), embeds the current style-aligned query,
takes the top-k cosine matches, and asks the evaluator to either approve one
candidate or rewrite the query. After the round cap, the evaluator picks the
best candidate seen so far. No record is ever shown to the evaluator twice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import NamegenError, RetrievalParams, UserQuery
from .corpus import (
    Corpus,
    Embedder,
    FILTERABLE_FIELDS,
    PoemRecord,
    RetrievedKnowledge,
    VectorIndex,
    coarse_filter,
)
from .agents import Evaluator, Manager, RewriteDecision

#: At most this many historical candidates go into the fallback prompt.
FALLBACK_POOL_LIMIT = 10


class RetrievalEmptyError(NamegenError):
    """Nothing survived coarse filtering in the first round."""


@dataclass(slots=True)
class RetrievalState:
    """Mutable loop state, kept for inspection by callers and tests."""

    round: int = 0
    history: set[str] = field(default_factory=set)
    query: str | None = None
    candidates: list[tuple[str, float]] = field(default_factory=list)
    exhausted: bool = False
    #: Candidate ids shown to the evaluator, per round, in rank order.
    rounds_candidates: list[list[str]] = field(default_factory=list)
    evaluator_calls: int = 0


@dataclass(frozen=True, slots=True)
class RetrievalResult:
    knowledge: RetrievedKnowledge
    state: RetrievalState


def retrieval_predicates(key_info: dict[str, str]) -> dict[str, str]:
    """Key-info entries whose keys name corpus metadata fields become
    coarse-filter predicates; everything else is ignored here."""
    return {k: v for k, v in key_info.items() if k in FILTERABLE_FIELDS}


def _candidates_block(records: list[tuple[PoemRecord, float]]) -> str:
    lines = []
    for record, score in records:
        verses = " / ".join(record.content)
        lines.append(
            f"[{record.id}] 《{record.title}》 - {record.poet} ({record.dynasty}): {verses}"
        )
    return "\n".join(lines)


def moo_retrieve(
    query: UserQuery,
    key_info: dict[str, str],
    corpus: Corpus,
    index: VectorIndex,
    embedder: Embedder,
    params: RetrievalParams,
    manager: Manager,
    evaluator: Evaluator,
    task_type: str,
) -> RetrievalResult:
    """Run the retrieval loop and return the approved knowledge.

    Rounds are 1-based; the style-aligned query is built on the first round
    so matching always has a query. Coarse filtering applies only while
    round < coarse_rounds. After max_rounds rejections the evaluator picks
    the best candidate from the accumulated history in one final call.
    """
    state = RetrievalState()
    predicates = retrieval_predicates(key_info)
    scores_by_id: dict[str, float] = {}

    for round_no in range(1, params.max_rounds + 1):
        state.round = round_no
        available = [r for r in corpus if r.id not in state.history]
        if round_no < params.coarse_rounds:
            pool = coarse_filter(available, predicates)
        else:
            pool = available
        if round_no == 1:
            if not pool:
                raise RetrievalEmptyError(
                    "no corpus records survive coarse filtering in round 1"
                )
            state.query = manager.build_query(query, task_type, key_info)
        if not pool:
            state.exhausted = True
            break

        assert state.query is not None
        query_vec = embedder.embed(state.query)
        ranked = index.top_k(query_vec, params.top_k, subset=[r.id for r in pool])
        state.candidates = ranked
        state.rounds_candidates.append([rid for rid, _ in ranked])
        for rid, score in ranked:
            state.history.add(rid)
            scores_by_id[rid] = score

        shown = [(corpus.get(rid), score) for rid, score in ranked]
        decision = evaluator.evaluate_candidates(
            candidates=_candidates_block([(r, s) for r, s in shown if r is not None]),
            current_query=state.query,
            request=query.raw_text,
            task_type=task_type,
            valid_ids=[rid for rid, _ in ranked],
        )
        state.evaluator_calls += 1
        if isinstance(decision, RewriteDecision):
            state.query = decision.query
            continue
        record = corpus.get(decision.record_id)
        assert record is not None
        return RetrievalResult(
            knowledge=RetrievedKnowledge(
                record=record,
                rationale=decision.rationale,
                score=scores_by_id.get(decision.record_id),
            ),
            state=state,
        )

    # Every round was rejected (or the remaining corpus ran dry): have the
    # evaluator pick the best of the top historical candidates by score.
    if not state.history:
        raise RetrievalEmptyError("retrieval history is empty; nothing to fall back on")
    pool_ids = sorted(
        state.history, key=lambda rid: (-scores_by_id.get(rid, 0.0), rid)
    )[:FALLBACK_POOL_LIMIT]
    shown = [(corpus.get(rid), scores_by_id.get(rid, 0.0)) for rid in pool_ids]
    decision = evaluator.pick_from_history(
        candidates=_candidates_block([(r, s) for r, s in shown if r is not None]),
        request=query.raw_text,
        task_type=task_type,
        valid_ids=pool_ids,
    )
    state.evaluator_calls += 1
    record = corpus.get(decision.record_id)
    assert record is not None
    return RetrievalResult(
        knowledge=RetrievedKnowledge(
            record=record,
            rationale=decision.rationale,
            score=scores_by_id.get(decision.record_id),
        ),
        state=state,
    )
