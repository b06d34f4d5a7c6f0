"""Shared domain types for the naming pipeline.

Everything here is an immutable, validated value object passed between the
preparation, retrieval, optimization, and reporting layers. Score handling
convention: rubric scores are integers 0-3, combined round scores live on
[0, 1], and the 0-100 scale appears only at metric/report boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import TYPE_CHECKING, Mapping

if TYPE_CHECKING:
    from .corpus import RetrievedKnowledge

#: Tolerance for "weights sum to one" checks.
WEIGHT_SUM_TOL = 1e-9

#: Labels of the three implicit explanation-quality objectives.
IMPLICIT_LABELS = ("accuracy", "completeness", "clarity")


class NamegenError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(NamegenError, ValueError):
    """A domain value violates one of its invariants."""


class DegeneratePreferenceError(ValidationError):
    """All preference weights are zero, so no normalization exists."""


class Gender(str, Enum):
    FEMALE = "female"
    MALE = "male"
    OTHER = "other"


class ObjectiveKind(str, Enum):
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"


class RegenFlag(str, Enum):
    UNSET = "unset"
    REGENERATE = "regenerate"
    ACCEPT = "accept"


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationError(message)


@dataclass(frozen=True, slots=True)
class UserQuery:
    """A single creative request as supplied by the user."""

    raw_text: str
    surname: str | None = None
    birth_datetime: datetime | None = None
    gender: Gender | None = None
    explicit_objectives: tuple[str, ...] | None = None
    preference_hints: str | None = None

    def __post_init__(self) -> None:
        _require(bool(self.raw_text.strip()), "raw_text must be non-empty")
        if self.surname is not None:
            _require(bool(self.surname.strip()), "surname, when given, must be non-empty")
        if self.explicit_objectives is not None:
            object.__setattr__(
                self, "explicit_objectives", tuple(self.explicit_objectives)
            )
            _require(
                all(o.strip() for o in self.explicit_objectives),
                "explicit objectives must be non-empty labels",
            )


@dataclass(frozen=True, slots=True)
class ObjectiveSpec:
    """One creative objective: a user-stated requirement or a fixed
    explanation-quality attribute."""

    id: str
    kind: ObjectiveKind
    label: str
    description: str | None = None
    requirement: str | None = None

    def __post_init__(self) -> None:
        _require(bool(self.id), "objective id must be non-empty")
        _require(bool(self.label.strip()), "objective label must be non-empty")
        if self.kind is ObjectiveKind.IMPLICIT:
            _require(
                self.label in IMPLICIT_LABELS,
                f"implicit objective label must be one of {IMPLICIT_LABELS}",
            )


@dataclass(frozen=True, slots=True)
class ObjectiveSet:
    """An ordered collection of objectives; order is load-bearing because
    weights, descriptions, and explanations align to it index-wise."""

    specs: tuple[ObjectiveSpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "specs", tuple(self.specs))
        _require(len(self.specs) > 0, "objective set must not be empty")
        ids = [s.id for s in self.specs]
        _require(len(set(ids)) == len(ids), "objective ids must be unique")

    def __len__(self) -> int:
        return len(self.specs)

    def __iter__(self):
        return iter(self.specs)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(s.label for s in self.specs)

    @classmethod
    def explicit_from_labels(cls, labels: list[str] | tuple[str, ...]) -> "ObjectiveSet":
        """Build an explicit objective set from bare labels (ids derived
        positionally)."""
        return cls(
            tuple(
                ObjectiveSpec(id=f"euo-{k + 1}", kind=ObjectiveKind.EXPLICIT, label=label)
                for k, label in enumerate(labels)
            )
        )


def implicit_objectives() -> ObjectiveSet:
    """The fixed implicit triple: accuracy, completeness, clarity."""
    return ObjectiveSet(
        tuple(
            ObjectiveSpec(id=f"iio-{label}", kind=ObjectiveKind.IMPLICIT, label=label)
            for label in IMPLICIT_LABELS
        )
    )


@dataclass(frozen=True, slots=True)
class WeightVector:
    """Non-negative weights summing to one, aligned to an ObjectiveSet."""

    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        _require(len(self.weights) > 0, "weight vector must not be empty")
        _require(all(math.isfinite(w) for w in self.weights), "weights must be finite")
        _require(all(w >= 0.0 for w in self.weights), "weights must be non-negative")
        total = sum(self.weights)
        _require(
            abs(total - 1.0) <= WEIGHT_SUM_TOL,
            f"weights must sum to 1 (got {total!r})",
        )

    def __len__(self) -> int:
        return len(self.weights)

    def __iter__(self):
        return iter(self.weights)

    @classmethod
    def uniform(cls, n: int) -> "WeightVector":
        _require(n >= 1, "uniform weight vector needs n >= 1")
        return cls(tuple(1.0 / n for _ in range(n)))


def normalize_weights(raw: list[float] | tuple[float, ...]) -> WeightVector:
    """Normalize raw non-negative preference scores into a weight vector.

    Zero entries are allowed (the user ignores that objective); an all-zero
    input has no direction and is rejected.
    """
    values = [float(v) for v in raw]
    _require(len(values) > 0, "cannot normalize an empty vector")
    _require(all(math.isfinite(v) for v in values), "raw weights must be finite")
    _require(all(v >= 0.0 for v in values), "raw weights must be non-negative")
    total = sum(values)
    if total <= 0.0:
        raise DegeneratePreferenceError("all preference scores are zero")
    return WeightVector(tuple(v / total for v in values))


def norm_rubric(score: float) -> float:
    """Map a 0-3 rubric score onto the 0-100 reporting scale."""
    s = float(score)
    _require(math.isfinite(s), "rubric score must be finite")
    if not 0.0 <= s <= 3.0:
        raise ValidationError(f"rubric score must be in [0, 3], got {s!r}")
    return s / 3.0 * 100.0


@dataclass(frozen=True, slots=True)
class HybridInfo:
    """The prepared information bundle handed from preparation to the
    optimization loop."""

    task_type: str
    preference: WeightVector
    key_info: Mapping[str, str]
    descriptions: tuple[str, ...]
    requirements: tuple[str, ...]
    retrieved_knowledge: "RetrievedKnowledge | None" = None
    shots: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        _require(bool(self.task_type.strip()), "task_type must be non-empty")
        object.__setattr__(self, "key_info", dict(self.key_info))
        object.__setattr__(self, "descriptions", tuple(self.descriptions))
        object.__setattr__(self, "requirements", tuple(self.requirements))
        object.__setattr__(
            self, "shots", tuple((str(a), str(b)) for a, b in self.shots)
        )
        m = len(self.preference)
        _require(
            len(self.descriptions) == len(self.requirements) == m,
            "descriptions/requirements must align one-to-one with objectives",
        )
        _require(
            all(d.strip() for d in self.descriptions)
            and all(r.strip() for r in self.requirements),
            "descriptions and requirements must be non-empty",
        )

    @property
    def objective_count(self) -> int:
        return len(self.preference)


@dataclass(frozen=True, slots=True)
class CreativeOutput:
    """A generated result plus one explanation per explicit objective."""

    result: str
    explanations: tuple[str, ...]
    transcript_id: str | None = None

    def __post_init__(self) -> None:
        _require(bool(self.result.strip()), "result must be non-empty")
        object.__setattr__(self, "explanations", tuple(self.explanations))
        _require(len(self.explanations) > 0, "at least one explanation is required")


@dataclass(frozen=True, slots=True)
class EvalRecord:
    """Outcome of one optimization round: flags, combined scores against the
    round thresholds, raw rubric vectors, and feedback for regeneration."""

    round: int
    regen_flag: RegenFlag
    theta_imp: float | None = None
    theta_exp: float | None = None
    psi_imp: float | None = None
    psi_exp: float | None = None
    score_vectors: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    feedback: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        _require(self.round >= 1, "round counter starts at 1")
        object.__setattr__(
            self,
            "score_vectors",
            {k: tuple(int(s) for s in v) for k, v in dict(self.score_vectors).items()},
        )
        object.__setattr__(self, "feedback", tuple(self.feedback))
        for theta in (self.theta_imp, self.theta_exp):
            if theta is not None:
                _require(0.0 <= theta <= 1.0, "combined scores live on [0, 1]")
        if self.regen_flag is RegenFlag.ACCEPT:
            _require(
                self.theta_imp is not None and self.theta_exp is not None,
                "an accepted round must carry both combined scores",
            )
            _require(
                self.psi_imp is not None and self.psi_exp is not None,
                "an accepted round must carry both thresholds",
            )
            _require(
                self.theta_imp >= self.psi_imp and self.theta_exp >= self.psi_exp,
                "an accepted round must meet both thresholds",
            )


@dataclass(frozen=True, slots=True)
class RetrievalParams:
    """Knobs for the iterative knowledge retrieval loop."""

    coarse_rounds: int = 2
    max_rounds: int = 3
    top_k: int = 5

    def __post_init__(self) -> None:
        _require(self.coarse_rounds >= 0, "coarse_rounds must be >= 0")
        _require(self.max_rounds >= 1, "max_rounds must be >= 1")
        _require(self.top_k >= 1, "top_k must be >= 1")


@dataclass(frozen=True, slots=True)
class ThresholdParams:
    """Acceptance-threshold schedule and round caps for the optimization loop.

    The threshold holds at ``delta`` through ``warmup`` evaluation rounds and
    then decays as delta / (alpha * ln(round + warmup)).
    """

    delta: float = 0.85
    alpha: float = 0.75
    warmup: int = 2
    max_rounds: int = 8
    retrieval: RetrievalParams = field(default_factory=RetrievalParams)

    def __post_init__(self) -> None:
        _require(0.0 < self.delta <= 1.0, "delta must be in (0, 1]")
        _require(self.alpha > 0.0, "alpha must be positive")
        _require(self.warmup >= 1, "warmup must be >= 1")
        _require(self.max_rounds >= 1, "max_rounds must be >= 1")
        _require(self.warmup < self.max_rounds, "warmup must be < max_rounds")
