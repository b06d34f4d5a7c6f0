"""Evaluation metric suite and the judge harness that feeds it.

All metrics live on the 0-100 scale. Standard deviations are population
(divide-by-m) throughout, and the per-objective spread is unweighted even
though the completeness mean is weighted.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import NamegenError, ValidationError, norm_rubric
from .corpus import Corpus, RetrievedKnowledge
from .gateway import CallStage, DecodingParams, EVALUATOR_PARAMS, Gateway
from .agents import PARSE_ATTEMPTS, AgentError, Envelope, EnvelopeError, ask_parsed
from .prompts import PromptLibrary
from .verification import verify_claim

logger = logging.getLogger(__name__)


class MetricsError(NamegenError):
    pass


@dataclass(frozen=True, slots=True)
class SampleScores:
    """Judged scores for one sample: per-objective explicit scores with
    their annotated weights, plus the implicit triple."""

    sample_id: str
    explicit: tuple[float, ...]
    weights: tuple[float, ...]
    acc: float
    crc: float
    lr: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "explicit", tuple(float(s) for s in self.explicit))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not self.explicit or len(self.explicit) != len(self.weights):
            raise ValidationError("explicit scores and weights must align, non-empty")
        if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise ValidationError("weights must be non-negative with a positive sum")
        for value in (*self.explicit, self.acc, self.crc, self.lr):
            if not 0.0 <= value <= 100.0:
                raise ValidationError(f"scores live on [0, 100], got {value!r}")

    @property
    def explicit_mean(self) -> float:
        """Weighted per-sample explicit completeness."""
        return sum(w * s for w, s in zip(self.weights, self.explicit)) / sum(self.weights)

    @property
    def implicit_mean(self) -> float:
        return (self.acc + self.crc + self.lr) / 3.0


def _pstd(values: Sequence[float]) -> float:
    mean = sum(values) / len(values)
    return math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))


def _check_samples(samples: Sequence[SampleScores]) -> None:
    if not samples:
        raise MetricsError("at least one sample is required")


def ec(samples: Sequence[SampleScores]) -> float:
    """Mean over samples of the weighted per-objective score mean."""
    _check_samples(samples)
    return sum(s.explicit_mean for s in samples) / len(samples)


def ec_std(samples: Sequence[SampleScores]) -> float:
    """Mean over samples of the unweighted per-objective score spread."""
    _check_samples(samples)
    return sum(_pstd(s.explicit) for s in samples) / len(samples)


def ic_components(samples: Sequence[SampleScores]) -> tuple[float, float, float]:
    """Per-component means of the implicit triple (acc, crc, lr)."""
    _check_samples(samples)
    n = len(samples)
    return (
        sum(s.acc for s in samples) / n,
        sum(s.crc for s in samples) / n,
        sum(s.lr for s in samples) / n,
    )


def ic(samples: Sequence[SampleScores]) -> float:
    _check_samples(samples)
    return sum(s.implicit_mean for s in samples) / len(samples)


def ic_std(samples: Sequence[SampleScores]) -> float:
    _check_samples(samples)
    return sum(_pstd((s.acc, s.crc, s.lr)) for s in samples) / len(samples)


def cc(ec_value: float, ic_value: float) -> float:
    for value in (ec_value, ic_value):
        if not 0.0 <= value <= 100.0:
            raise ValidationError(f"inputs live on [0, 100], got {value!r}")
    return (ec_value + ic_value) / 2.0


def cc_std(samples: Sequence[SampleScores]) -> float:
    """Mean over samples of the two-point spread of per-sample explicit and
    implicit means."""
    _check_samples(samples)
    return sum(_pstd((s.explicit_mean, s.implicit_mean)) for s in samples) / len(samples)


def div(results_by_method: Mapping[str, Mapping[str, str]]) -> dict[str, float]:
    """Uniqueness score per method: 100 x fraction of samples whose result
    text appears in no other method's result for the same sample.

    Texts are compared exactly after trimming surrounding whitespace.
    """
    if len(results_by_method) < 2:
        raise MetricsError("diversity needs at least two methods")
    methods = sorted(results_by_method)
    sample_ids = set(results_by_method[methods[0]])
    for method in methods[1:]:
        if set(results_by_method[method]) != sample_ids:
            raise MetricsError("all methods must cover the same sample ids")
    if not sample_ids:
        raise MetricsError("at least one sample is required")

    scores: dict[str, float] = {}
    for method in methods:
        unique = 0
        for sample_id in sample_ids:
            text = results_by_method[method][sample_id].strip()
            others = (
                results_by_method[other][sample_id].strip()
                for other in methods
                if other != method
            )
            if all(text != other for other in others):
                unique += 1
        scores[method] = 100.0 * unique / len(sample_ids)
    return scores


@dataclass(frozen=True, slots=True)
class MethodReport:
    """One row of the evaluation table, everything on the 0-100 scale."""

    method: str
    backbone: str
    ec: float
    ec_std: float
    acc: float
    crc: float
    lr: float
    ic: float
    ic_std: float
    cc: float
    cc_std: float
    div: float

    def __post_init__(self) -> None:
        if abs(self.cc - (self.ec + self.ic) / 2.0) > 1e-9:
            raise ValidationError("cc must equal (ec + ic) / 2")


def method_report(
    method: str,
    backbone: str,
    samples: Sequence[SampleScores],
    div_score: float,
) -> MethodReport:
    acc, crc, lr = ic_components(samples)
    ec_value = ec(samples)
    ic_value = ic(samples)
    return MethodReport(
        method=method,
        backbone=backbone,
        ec=ec_value,
        ec_std=ec_std(samples),
        acc=acc,
        crc=crc,
        lr=lr,
        ic=ic_value,
        ic_std=ic_std(samples),
        cc=cc(ec_value, ic_value),
        cc_std=cc_std(samples),
        div=div_score,
    )


@dataclass
class Judge:
    """Backend-pluggable rubric judge producing SampleScores.

    Per sample: one call per objective for the explicit scores, one call for
    semantic quality and logical consistency, and one claim-extraction call
    whose claims are verified by the rule layer to yield the accuracy score.
    A sample whose replies stay unparseable is returned as None (excluded
    from the means, counted by the caller).
    """

    gateway: Gateway
    prompts: PromptLibrary
    params: DecodingParams = EVALUATOR_PARAMS

    def _explicit(self, result: str, explanation: str, objective: str) -> float:
        prompt = self.prompts.render(
            "judge_explicit", objective=objective, result=result, explanation=explanation
        )
        score = ask_parsed(
            self.gateway,
            prompt,
            self.params,
            CallStage.EXPLICIT_EVAL,
            lambda text: Envelope.parse(text).require_int("SCORE"),
            PARSE_ATTEMPTS,
        )
        return norm_rubric(score)

    def _implicit(self, result: str, explanations: Sequence[str]) -> tuple[float, float]:
        prompt = self.prompts.render(
            "judge_implicit",
            result=result,
            explanations="\n".join(
                f"{k}. {e}" for k, e in enumerate(explanations, start=1)
            ),
        )

        def parse(text: str) -> tuple[int, int]:
            env = Envelope.parse(text)
            return env.require_int("SCORE_CRC"), env.require_int("SCORE_LR")

        crc, lr = ask_parsed(
            self.gateway, prompt, self.params, CallStage.IMPLICIT_EVAL, parse, PARSE_ATTEMPTS
        )
        return norm_rubric(crc), norm_rubric(lr)

    def _accuracy(
        self,
        result: str,
        explanations: Sequence[str],
        knowledge: RetrievedKnowledge | None,
        corpus: Corpus | None,
    ) -> float:
        """Extract citation claims and verify them against the sources; the
        verified fraction is the accuracy. No claims means nothing to get
        wrong, which scores 100."""
        prompt = self.prompts.render(
            "extract_claims",
            result=result,
            explanations="\n".join(
                f"{k}. {e}" for k, e in enumerate(explanations, start=1)
            ),
        )

        def parse(text: str) -> list[tuple[str, str]]:
            env = Envelope.parse(text)
            count = env.require_int("CLAIM_COUNT", lo=0, hi=10_000)
            claims = []
            for k in range(1, count + 1):
                raw = env.indexed.get("CLAIM", {}).get(k)
                if raw is None:
                    raise EnvelopeError(f"missing CLAIM[{k}]")
                verse, _, title = raw.partition("|")
                claims.append((verse.strip(), title.strip()))
            return claims

        claims = ask_parsed(
            self.gateway, prompt, self.params, CallStage.IMPLICIT_EVAL, parse, PARSE_ATTEMPTS
        )
        if not claims:
            return 100.0
        verified = sum(
            1 for verse, title in claims if verify_claim(verse, title, knowledge, corpus)
        )
        return 100.0 * verified / len(claims)

    def score_sample(
        self,
        sample_id: str,
        result: str,
        explanations: Sequence[str],
        objectives: Sequence[str],
        weights: Sequence[float],
        knowledge: RetrievedKnowledge | None = None,
        corpus: Corpus | None = None,
    ) -> SampleScores | None:
        if len(explanations) != len(objectives):
            raise MetricsError("one explanation per objective is required")
        try:
            explicit = tuple(
                self._explicit(result, explanation, objective)
                for explanation, objective in zip(explanations, objectives)
            )
            crc, lr = self._implicit(result, explanations)
            acc = self._accuracy(result, explanations, knowledge, corpus)
        except AgentError as exc:
            logger.warning("sample %s left unscored: %s", sample_id, exc)
            return None
        return SampleScores(
            sample_id=sample_id,
            explicit=explicit,
            weights=tuple(weights),
            acc=acc,
            crc=crc,
            lr=lr,
        )
