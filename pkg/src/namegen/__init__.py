"""Multi-agent, multi-objective pipeline for short-form creative generation.

The package splits into: shared domain types (core), a chat-completion
gateway with mock/replay backends (gateway), poetry corpus ingestion and
cosine search (corpus), evaluator-guided retrieval (retrieval), the three
prompt-orchestration roles (agents), the rule-based accuracy gate
(verification), the iterative optimization loop (optimizer), the metric
suite and judge harness (metrics), the benchmark harness (bench), and the
CLI plus config plumbing (cli, config).
"""

from .core import (
    CreativeOutput,
    EvalRecord,
    Gender,
    HybridInfo,
    ObjectiveKind,
    ObjectiveSet,
    ObjectiveSpec,
    RegenFlag,
    RetrievalParams,
    ThresholdParams,
    UserQuery,
    WeightVector,
    normalize_weights,
    norm_rubric,
)

__all__ = [
    "CreativeOutput",
    "EvalRecord",
    "Gender",
    "HybridInfo",
    "ObjectiveKind",
    "ObjectiveSet",
    "ObjectiveSpec",
    "RegenFlag",
    "RetrievalParams",
    "ThresholdParams",
    "UserQuery",
    "WeightVector",
    "normalize_weights",
    "norm_rubric",
]

__version__ = "0.1.0"
