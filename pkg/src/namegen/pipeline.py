"""End-to-end pipeline for one query: prepare information, then optimize.

Preparation covers task analysis, objective parsing, preference estimation,
key-info extraction, knowledge retrieval, and description/requirement
design. The options dataclass exposes the knobs that trade preparation
calls for speed (preset task type, skipped expansion, fewer review rounds);
the defaults run every stage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

from .core import (
    HybridInfo,
    ObjectiveSet,
    ThresholdParams,
    UserQuery,
    WeightVector,
)
from .corpus import Corpus, Embedder, RetrievedKnowledge, VectorIndex
from .agents import (
    AgentTeam,
    DESIGN_REVIEW_ROUNDS,
    OBJECTIVE_REVIEW_ROUNDS,
    design_desc_reqs,
    estimate_preference,
    extract_key_info,
    parse_euos,
)
from .optimizer import OptimizationResult, optimize
from .prompts import PromptLibrary, load_shots
from .retrieval import RetrievalResult, moo_retrieve
from .verification import Rule

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class PipelineOptions:
    """Preparation knobs. ``task_type`` preset skips the analysis call;
    ``expand_key_info`` off skips the expansion call; review rounds of zero
    skip the corresponding evaluator reviews."""

    task_type: str | None = None
    expand_key_info: bool = True
    objective_review_rounds: int = OBJECTIVE_REVIEW_ROUNDS
    design_review_rounds: int = DESIGN_REVIEW_ROUNDS
    shots: int = 2
    shots_path: str | None = None


@dataclass
class PipelineDeps:
    """Everything a pipeline run needs besides the query itself."""

    team: AgentTeam
    prompts: PromptLibrary
    corpus: Corpus
    index: VectorIndex
    embedder: Embedder
    params: ThresholdParams = field(default_factory=ThresholdParams)
    options: PipelineOptions = field(default_factory=PipelineOptions)
    #: optional per-task accuracy-rule resolver (task type -> rule registry)
    rules_for_task: Callable[[str], dict[str, Rule] | None] | None = None


@dataclass(frozen=True, slots=True)
class PreparationResult:
    info: HybridInfo
    objectives: ObjectiveSet
    retrieval: RetrievalResult
    warnings: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class PipelineResult:
    preparation: PreparationResult
    optimization: OptimizationResult
    ledger: dict[str, int]


def prepare(query: UserQuery, deps: PipelineDeps) -> PreparationResult:
    """Build the hybrid information bundle for one query."""
    team, options = deps.team, deps.options
    warnings: list[str] = []

    task_type = options.task_type or team.manager.analyze_task(query)

    if query.explicit_objectives:
        objectives = ObjectiveSet.explicit_from_labels(list(query.explicit_objectives))
    else:
        objectives, approved = parse_euos(
            team.manager, team.evaluator, task_type, options.objective_review_rounds
        )
        if not approved:
            warnings.append("objective set never approved; using last proposal")

    labels = objectives.labels
    if len(labels) == 1:
        # A single objective has only one possible weighting.
        preference = WeightVector.uniform(1)
    else:
        preference = estimate_preference(team.manager, labels, query)

    key_info = extract_key_info(
        team.manager, query, task_type, expand=options.expand_key_info
    )

    retrieval = moo_retrieve(
        query=query,
        key_info=key_info,
        corpus=deps.corpus,
        index=deps.index,
        embedder=deps.embedder,
        params=deps.params.retrieval,
        manager=team.manager,
        evaluator=team.evaluator,
        task_type=task_type,
    )
    knowledge: RetrievedKnowledge = retrieval.knowledge

    descriptions, requirements, approved = design_desc_reqs(
        team.manager,
        team.evaluator,
        query,
        objectives,
        key_info,
        knowledge,
        options.design_review_rounds,
    )
    if not approved:
        warnings.append("descriptions/requirements never approved; using last version")
    # From here on every explicit objective carries its designed description
    # and explanatory requirement.
    objectives = ObjectiveSet(
        tuple(
            replace(spec, description=desc, requirement=req)
            for spec, desc, req in zip(objectives, descriptions, requirements)
        )
    )

    shots = load_shots(options.shots, options.shots_path)
    info = HybridInfo(
        task_type=task_type,
        preference=preference,
        key_info=key_info,
        descriptions=descriptions,
        requirements=requirements,
        retrieved_knowledge=knowledge,
        shots=shots,
    )
    return PreparationResult(
        info=info,
        objectives=objectives,
        retrieval=retrieval,
        warnings=tuple(warnings),
    )


def run_query(
    query: UserQuery,
    deps: PipelineDeps,
    rules: dict[str, Rule] | None = None,
) -> PipelineResult:
    """Prepare and optimize one query; the shared ledger ends up holding
    every backend call either stage made."""
    preparation = prepare(query, deps)
    if rules is None and deps.rules_for_task is not None:
        rules = deps.rules_for_task(preparation.info.task_type)
    optimization = optimize(
        query=query,
        info=preparation.info,
        params=deps.params,
        team=deps.team,
        corpus=deps.corpus,
        rules=rules,
    )
    return PipelineResult(
        preparation=preparation,
        optimization=optimization,
        ledger=deps.team.generator.gateway.ledger.snapshot(),
    )
