"""Prompt-orchestration roles.

Three stateless roles over the gateway: the manager prepares task
information, the generator produces candidates, and the evaluator scores
content and writes feedback. All replies are line-oriented tagged text
(``TAG: value`` / ``TAG[k]: value``); malformed replies trigger a bounded
number of re-asks, each of which is a fresh ledger-counted call.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence, TypeVar

from .core import (
    CreativeOutput,
    DegeneratePreferenceError,
    NamegenError,
    ObjectiveSet,
    RegenFlag,
    UserQuery,
    WeightVector,
    normalize_weights,
)
from .corpus import RetrievedKnowledge
from .gateway import (
    CallStage,
    ChatMessage,
    DecodingParams,
    EVALUATOR_PARAMS,
    GENERATOR_PARAMS,
    Gateway,
    MANAGER_PARAMS,
    assistant,
    user,
)
from .prompts import PromptLibrary

logger = logging.getLogger(__name__)

#: The five default explicit objectives for the Chinese-baby-naming task.
DEFAULT_NCB_OBJECTIVES = (
    "traditional Chinese cultural significance",
    "parental expectations",
    "Bazi&Wuxing",
    "personal characteristics",
    "other special requirements",
)

#: Attempt budgets (first ask plus re-asks).
PARSE_ATTEMPTS = 3
PREFERENCE_ATTEMPTS = 2
SELECT_ATTEMPTS = 2

#: Review-loop caps for the preparation stage.
OBJECTIVE_REVIEW_ROUNDS = 3
DESIGN_REVIEW_ROUNDS = 3

_T = TypeVar("_T")


class EnvelopeError(NamegenError, ValueError):
    """A backend reply does not carry the tags an operation requires."""


class AgentError(NamegenError):
    """An agent operation failed after exhausting its re-asks."""


class GenerationError(AgentError):
    """Generator output stayed unparseable; the round counts as failed."""


class ScoringError(AgentError):
    """Evaluator scoring stayed unparseable; the round counts as failed."""


_TAG_RE = re.compile(r"^([A-Z][A-Z0-9_]*)(?:\[(\d+)\])?\s*[:：]\s*(.*)$")


@dataclass
class Envelope:
    """Tagged fields parsed from a backend reply.

    Lines before the first tag are ignored (models love preambles); lines
    after a tag that do not start a new tag continue the previous value.
    """

    tags: dict[str, str] = field(default_factory=dict)
    indexed: dict[str, dict[int, str]] = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str) -> "Envelope":
        env = cls()
        current: tuple[str, int | None] | None = None
        for line in text.splitlines():
            match = _TAG_RE.match(line.strip())
            if match:
                tag, idx, value = match.group(1), match.group(2), match.group(3)
                if idx is None:
                    env.tags[tag] = value.strip()
                    current = (tag, None)
                else:
                    env.indexed.setdefault(tag, {})[int(idx)] = value.strip()
                    current = (tag, int(idx))
            elif current is not None and line.strip():
                tag, idx = current
                if idx is None:
                    env.tags[tag] = (env.tags[tag] + "\n" + line.strip()).strip()
                else:
                    env.indexed[tag][idx] = (
                        env.indexed[tag][idx] + "\n" + line.strip()
                    ).strip()
        return env

    def require(self, tag: str) -> str:
        value = self.tags.get(tag, "")
        if not value:
            raise EnvelopeError(f"missing tag {tag}")
        return value

    def require_int(self, tag: str, lo: int = 0, hi: int = 3) -> int:
        raw = self.require(tag)
        try:
            value = int(raw)
        except ValueError:
            raise EnvelopeError(f"tag {tag} is not an integer: {raw!r}") from None
        if not lo <= value <= hi:
            raise EnvelopeError(f"tag {tag} out of range [{lo}, {hi}]: {value}")
        return value

    def require_indexed(self, tag: str, count: int) -> tuple[str, ...]:
        values = self.indexed.get(tag, {})
        missing = [k for k in range(1, count + 1) if not values.get(k)]
        if missing:
            raise EnvelopeError(f"missing tag {tag}[{missing[0]}]")
        return tuple(values[k] for k in range(1, count + 1))


def ask_parsed(
    gateway: Gateway,
    prompt: str,
    params: DecodingParams,
    stage: CallStage,
    parser: Callable[[str], _T],
    attempts: int,
) -> _T:
    """Call the backend, parse, and re-ask with the parse error on failure."""
    messages: list[ChatMessage] = [user(prompt)]
    last: EnvelopeError | None = None
    for _ in range(attempts):
        text = gateway.complete(messages, params, stage=stage)
        try:
            return parser(text)
        except EnvelopeError as exc:
            last = exc
            messages = messages + [
                assistant(text),
                user(
                    f"Your reply could not be parsed: {exc}. "
                    "Reply again following the required tag format exactly."
                ),
            ]
    raise AgentError(f"unparseable reply after {attempts} attempts: {last}")


# --- prompt block helpers (pure functions of their inputs) ---


def numbered(items: Sequence[str]) -> str:
    return "\n".join(f"{k}. {item}" for k, item in enumerate(items, start=1))


def knowledge_block(knowledge: RetrievedKnowledge | None) -> str:
    if knowledge is None:
        return "(none)"
    record = knowledge.record
    lines = [f"《{record.title}》 - {record.poet} ({record.dynasty})"]
    lines.extend(record.content)
    if record.interpretation:
        lines.append(f"interpretation: {record.interpretation}")
    if knowledge.rationale:
        lines.append(f"selected because: {knowledge.rationale}")
    return "\n".join(lines)


def key_info_block(key_info: dict[str, str]) -> str:
    if not key_info:
        return "(none)"
    return "\n".join(f"{k}: {key_info[k]}" for k in sorted(key_info))


def shots_block(shots: Sequence[tuple[str, str]]) -> str:
    if not shots:
        return ""
    parts = ["Examples:"]
    for inp, out in shots:
        parts.append(f"Input: {inp}\nOutput:\n{out}")
    return "\n" + "\n\n".join(parts) + "\n"


def regen_block(previous: str | None, feedback: Sequence[str]) -> str:
    lines = ["", "Your previous result was rejected."]
    if previous:
        lines.append(f"Previous result: {previous}")
    if feedback:
        lines.append("Reviewer feedback:")
        lines.extend(f"- {item}" for item in feedback)
    lines.append("Address every feedback item and produce a different, better result.")
    lines.append("")
    return "\n".join(lines)


def season_of_month(month: int) -> str:
    """Deterministic 3-month season blocks: 3-5 spring, 6-8 summer,
    9-11 autumn, 12-2 winter."""
    if month in (3, 4, 5):
        return "spring"
    if month in (6, 7, 8):
        return "summer"
    if month in (9, 10, 11):
        return "autumn"
    if month in (12, 1, 2):
        return "winter"
    raise ValueError(f"month out of range: {month}")


def derive_key_info(query: UserQuery) -> dict[str, str]:
    """Facts derivable locally from the structured query, no backend needed."""
    info: dict[str, str] = {}
    if query.surname:
        info["surname"] = query.surname
    if query.gender is not None:
        info["gender"] = query.gender.value
    if query.birth_datetime is not None:
        info["birth_datetime"] = query.birth_datetime.isoformat()
        info["season"] = season_of_month(query.birth_datetime.month)
    return info


# --- roles ---


@dataclass
class Manager:
    """Task analysis and information preparation."""

    gateway: Gateway
    prompts: PromptLibrary
    params: DecodingParams = MANAGER_PARAMS

    def analyze_task(self, query: UserQuery) -> str:
        prompt = self.prompts.render("task_analysis", query=query.raw_text)
        return ask_parsed(
            self.gateway,
            prompt,
            self.params,
            CallStage.PREPARATION,
            lambda text: Envelope.parse(text).require("TASK_TYPE"),
            PARSE_ATTEMPTS,
        )

    def propose_objectives(self, task_type: str, feedback: str | None) -> list[str]:
        block = ""
        if feedback:
            block = (
                "\nReviewer feedback on your previous proposal:\n"
                f"{feedback}\nRevise the list accordingly.\n"
            )
        prompt = self.prompts.render(
            "parse_objectives", task_type=task_type, feedback_block=block
        )

        def parse(text: str) -> list[str]:
            raw = Envelope.parse(text).require("OBJECTIVES")
            labels = [p.strip() for p in re.split(r"[;,；，]", raw) if p.strip()]
            if not 2 <= len(labels) <= 8:
                raise EnvelopeError(f"expected 2-8 objectives, got {len(labels)}")
            if len(set(labels)) != len(labels):
                raise EnvelopeError("objective labels must be distinct")
            return labels

        return ask_parsed(
            self.gateway, prompt, self.params, CallStage.PREPARATION, parse, PARSE_ATTEMPTS
        )

    def estimate_preference_scores(
        self, objectives: Sequence[str], query: UserQuery
    ) -> list[float]:
        prompt = self.prompts.render(
            "estimate_preference",
            task_type="creative generation",
            objectives=numbered(objectives),
            query=query.raw_text,
        )

        def parse(text: str) -> list[float]:
            raw = Envelope.parse(text).require("WEIGHTS")
            try:
                scores = [float(p) for p in re.split(r"[,，]", raw) if p.strip()]
            except ValueError:
                raise EnvelopeError(f"weights are not numbers: {raw!r}") from None
            if len(scores) != len(objectives):
                raise EnvelopeError(
                    f"expected {len(objectives)} weights, got {len(scores)}"
                )
            if any(s < 0 for s in scores):
                raise EnvelopeError("weights must be non-negative")
            return scores

        return ask_parsed(
            self.gateway,
            prompt,
            self.params,
            CallStage.PREPARATION,
            parse,
            PREFERENCE_ATTEMPTS,
        )

    def expand_key_info(
        self, query: UserQuery, task_type: str, known: dict[str, str]
    ) -> dict[str, str]:
        prompt = self.prompts.render(
            "expand_key_info",
            task_type=task_type,
            known=key_info_block(known),
            query=query.raw_text,
        )
        text = self.gateway.complete(
            [user(prompt)], self.params, stage=CallStage.PREPARATION
        )
        expanded: dict[str, str] = {}
        for match in re.finditer(
            r"^INFO\[([^\]]+)\]\s*[:：]\s*(.+)$", text, flags=re.MULTILINE
        ):
            key, value = match.group(1).strip(), match.group(2).strip()
            if key and value:
                expanded[key] = value
        return expanded

    def build_query(
        self, query: UserQuery, task_type: str, key_info: dict[str, str]
    ) -> str:
        prompt = self.prompts.render(
            "build_query",
            task_type=task_type,
            key_info=key_info_block(key_info),
            query=query.raw_text,
        )
        return ask_parsed(
            self.gateway,
            prompt,
            self.params,
            CallStage.RETRIEVAL,
            lambda text: Envelope.parse(text).require("QUERY"),
            PARSE_ATTEMPTS,
        )

    def design_round(
        self,
        query: UserQuery,
        objectives: Sequence[str],
        key_info: dict[str, str],
        knowledge: RetrievedKnowledge | None,
        feedback: str | None,
        prior: tuple[tuple[str, ...], tuple[str, ...]] | None,
    ) -> tuple[dict[int, str], dict[int, str]]:
        """One design call. On revision rounds the reply may resend only the
        entries it changes; the caller merges over the prior version."""
        block = ""
        if feedback and prior is not None:
            descs, reqs = prior
            pairs = "\n".join(
                f"DESCRIPTION[{k}]: {d}\nREQUIREMENT[{k}]: {r}"
                for k, (d, r) in enumerate(zip(descs, reqs), start=1)
            )
            block = (
                "\nReviewer feedback:\n"
                f"{feedback}\n"
                "Prior version:\n"
                f"{pairs}\n"
                "Resend only the numbered entries you change.\n"
            )
        prompt = self.prompts.render(
            "design_desc_reqs",
            task_type="creative generation",
            objectives=numbered(objectives),
            key_info=key_info_block(key_info),
            knowledge=knowledge_block(knowledge),
            query=query.raw_text,
            feedback_block=block,
        )

        def parse(text: str) -> tuple[dict[int, str], dict[int, str]]:
            env = Envelope.parse(text)
            descs = env.indexed.get("DESCRIPTION", {})
            reqs = env.indexed.get("REQUIREMENT", {})
            if prior is None:
                m = len(objectives)
                missing = [
                    k for k in range(1, m + 1) if not descs.get(k) or not reqs.get(k)
                ]
                if missing:
                    raise EnvelopeError(
                        f"missing DESCRIPTION/REQUIREMENT for objective {missing[0]}"
                    )
            elif not descs and not reqs:
                raise EnvelopeError("revision reply contains no entries")
            return descs, reqs

        return ask_parsed(
            self.gateway, prompt, self.params, CallStage.PREPARATION, parse, PARSE_ATTEMPTS
        )


@dataclass(frozen=True, slots=True)
class SelectDecision:
    record_id: str
    rationale: str


@dataclass(frozen=True, slots=True)
class RewriteDecision:
    query: str


@dataclass
class Evaluator:
    """Scores content and writes actionable feedback."""

    gateway: Gateway
    prompts: PromptLibrary
    params: DecodingParams = EVALUATOR_PARAMS

    def _review(self, prompt: str) -> tuple[bool, str]:
        def parse(text: str) -> tuple[bool, str]:
            env = Envelope.parse(text)
            verdict = env.require("APPROVE").lower()
            if verdict not in ("yes", "no"):
                raise EnvelopeError(f"APPROVE must be yes or no, got {verdict!r}")
            return verdict == "yes", env.tags.get("FEEDBACK", "")

        return ask_parsed(
            self.gateway,
            prompt,
            self.params,
            CallStage.PREPARATION,
            parse,
            PARSE_ATTEMPTS,
        )

    def review_objectives(self, labels: Sequence[str], task_type: str) -> tuple[bool, str]:
        prompt = self.prompts.render(
            "review_objectives", task_type=task_type, objectives=numbered(labels)
        )
        return self._review(prompt)

    def review_desc_reqs(
        self,
        descriptions: Sequence[str],
        requirements: Sequence[str],
        task_type: str,
    ) -> tuple[bool, str]:
        pairs = "\n".join(
            f"DESCRIPTION[{k}]: {d}\nREQUIREMENT[{k}]: {r}"
            for k, (d, r) in enumerate(zip(descriptions, requirements), start=1)
        )
        prompt = self.prompts.render("review_desc_reqs", task_type=task_type, pairs=pairs)
        return self._review(prompt)

    def score_implicit(
        self, explanation: str, requirement: str, task_type: str
    ) -> tuple[int, int, str]:
        """Rate one explanation for completeness and clarity (integers 0-3)."""
        if not explanation.strip():
            raise ValueError("explanation must be non-empty")
        prompt = self.prompts.render(
            "score_implicit",
            task_type=task_type,
            requirement=requirement,
            explanation=explanation,
        )

        def parse(text: str) -> tuple[int, int, str]:
            env = Envelope.parse(text)
            return (
                env.require_int("SCORE_COM"),
                env.require_int("SCORE_CLA"),
                env.tags.get("FEEDBACK", ""),
            )

        try:
            return ask_parsed(
                self.gateway,
                prompt,
                self.params,
                CallStage.IMPLICIT_EVAL,
                parse,
                PARSE_ATTEMPTS,
            )
        except AgentError as exc:
            raise ScoringError(str(exc)) from exc

    def score_explicit(
        self,
        explanation: str,
        description: str,
        requirement: str,
        knowledge: RetrievedKnowledge | None,
    ) -> tuple[int, str]:
        """Rate one explanation against its objective (integer 0-3)."""
        if not explanation.strip():
            raise ValueError("explanation must be non-empty")
        prompt = self.prompts.render(
            "score_explicit",
            description=description,
            requirement=requirement,
            knowledge=knowledge_block(knowledge),
            explanation=explanation,
        )

        def parse(text: str) -> tuple[int, str]:
            env = Envelope.parse(text)
            return env.require_int("SCORE_EXP"), env.tags.get("FEEDBACK", "")

        try:
            return ask_parsed(
                self.gateway,
                prompt,
                self.params,
                CallStage.EXPLICIT_EVAL,
                parse,
                PARSE_ATTEMPTS,
            )
        except AgentError as exc:
            raise ScoringError(str(exc)) from exc

    def evaluate_candidates(
        self,
        candidates: str,
        current_query: str,
        request: str,
        task_type: str,
        valid_ids: Sequence[str],
    ) -> SelectDecision | RewriteDecision:
        """Either approve one candidate or rewrite the retrieval query."""
        prompt = self.prompts.render(
            "evaluate_candidates",
            task_type=task_type,
            query=current_query,
            candidates=candidates,
            request=request,
        )

        def parse(text: str) -> SelectDecision | RewriteDecision:
            env = Envelope.parse(text)
            if "SELECT" in env.tags:
                record_id = env.tags["SELECT"].strip()
                if record_id not in valid_ids:
                    raise EnvelopeError(f"SELECT names unknown candidate {record_id!r}")
                return SelectDecision(record_id, env.tags.get("REASON", ""))
            if env.tags.get("REWRITE", "").strip():
                return RewriteDecision(env.tags["REWRITE"].strip())
            raise EnvelopeError("reply must carry SELECT or REWRITE")

        return ask_parsed(
            self.gateway,
            prompt,
            self.params,
            CallStage.RETRIEVAL,
            parse,
            SELECT_ATTEMPTS,
        )

    def pick_from_history(
        self,
        candidates: str,
        request: str,
        task_type: str,
        valid_ids: Sequence[str],
    ) -> SelectDecision:
        prompt = self.prompts.render(
            "pick_from_history",
            task_type=task_type,
            candidates=candidates,
            request=request,
        )

        def parse(text: str) -> SelectDecision:
            env = Envelope.parse(text)
            record_id = env.require("SELECT").strip()
            if record_id not in valid_ids:
                raise EnvelopeError(f"SELECT names unknown candidate {record_id!r}")
            return SelectDecision(record_id, env.tags.get("REASON", ""))

        return ask_parsed(
            self.gateway,
            prompt,
            self.params,
            CallStage.RETRIEVAL,
            parse,
            SELECT_ATTEMPTS,
        )


@dataclass
class Generator:
    """Produces the creative result and its per-objective explanations."""

    gateway: Gateway
    prompts: PromptLibrary
    params: DecodingParams = GENERATOR_PARAMS

    def generate(
        self,
        query: UserQuery,
        task_type: str,
        knowledge: RetrievedKnowledge | None,
        descriptions: Sequence[str],
        requirements: Sequence[str],
        shots: Sequence[tuple[str, str]],
        regen_flag: RegenFlag = RegenFlag.UNSET,
        feedback: Sequence[str] = (),
        previous: str | None = None,
    ) -> CreativeOutput:
        m = len(descriptions)
        block = ""
        if regen_flag is RegenFlag.REGENERATE:
            block = regen_block(previous, feedback)
        prompt = self.prompts.render(
            "generate",
            task_type=task_type,
            knowledge=knowledge_block(knowledge),
            descriptions=numbered(descriptions),
            requirements=numbered(requirements),
            shots=shots_block(shots),
            regen_block=block,
            query=query.raw_text,
        )

        def parse(text: str) -> CreativeOutput:
            env = Envelope.parse(text)
            name = env.require("NAME")
            explanations = env.require_indexed("EXPLANATION", m)
            return CreativeOutput(result=name, explanations=explanations)

        try:
            return ask_parsed(
                self.gateway,
                prompt,
                self.params,
                CallStage.GENERATION,
                parse,
                PARSE_ATTEMPTS,
            )
        except AgentError as exc:
            raise GenerationError(str(exc)) from exc


@dataclass
class AgentTeam:
    """The three roles wired to (possibly distinct) backends that share one
    call ledger."""

    manager: Manager
    generator: Generator
    evaluator: Evaluator


# --- preparation-stage loops ---


def parse_euos(
    manager: Manager,
    evaluator: Evaluator,
    task_type: str,
    review_rounds: int = OBJECTIVE_REVIEW_ROUNDS,
) -> tuple[ObjectiveSet, bool]:
    """Propose explicit objectives and iterate with evaluator feedback.

    Only called when the user supplies no explicit objectives. Returns the
    final set and whether the evaluator approved it; after the round cap the
    last set is returned unapproved.
    """
    feedback: str | None = None
    labels: list[str] = []
    if review_rounds == 0:
        labels = manager.propose_objectives(task_type, None)
        return ObjectiveSet.explicit_from_labels(labels), True
    for _ in range(max(1, review_rounds)):
        labels = manager.propose_objectives(task_type, feedback)
        approved, feedback = evaluator.review_objectives(labels, task_type)
        if approved:
            return ObjectiveSet.explicit_from_labels(labels), True
    logger.warning(
        "objective review never approved after %d rounds; keeping last set",
        review_rounds,
    )
    return ObjectiveSet.explicit_from_labels(labels), False


def estimate_preference(
    manager: Manager, objectives: Sequence[str], query: UserQuery
) -> WeightVector:
    """Estimate user preference weights over the objectives.

    Unparseable or all-zero replies fall back to uniform weights with a
    warning rather than failing the run.
    """
    if not objectives:
        raise ValueError("objectives must be non-empty")
    try:
        scores = manager.estimate_preference_scores(objectives, query)
        return normalize_weights(scores)
    except (AgentError, DegeneratePreferenceError) as exc:
        logger.warning("preference estimation fell back to uniform weights: %s", exc)
        return WeightVector.uniform(len(objectives))


def extract_key_info(
    manager: Manager,
    query: UserQuery,
    task_type: str,
    expand: bool = True,
) -> dict[str, str]:
    """Collect key facts: local derivations (surname, birth facts, season)
    plus one optional backend expansion call. Absent fields are simply
    omitted; nothing here is fatal."""
    info = derive_key_info(query)
    if expand:
        try:
            expanded = manager.expand_key_info(query, task_type, info)
        except NamegenError as exc:
            logger.warning("key-info expansion skipped: %s", exc)
            expanded = {}
        merged = dict(expanded)
        merged.update(info)  # structured query fields win over model output
        return merged
    return info


def design_desc_reqs(
    manager: Manager,
    evaluator: Evaluator,
    query: UserQuery,
    objectives: ObjectiveSet,
    key_info: dict[str, str],
    knowledge: RetrievedKnowledge | None,
    review_rounds: int = DESIGN_REVIEW_ROUNDS,
) -> tuple[tuple[str, ...], tuple[str, ...], bool]:
    """Design one description and one explanatory requirement per objective,
    iterating with evaluator feedback up to the round cap."""
    labels = objectives.labels
    m = len(labels)
    descs: list[str] = []
    reqs: list[str] = []
    feedback: str | None = None
    rounds = max(1, review_rounds) if review_rounds else 1
    for _ in range(rounds):
        prior = (tuple(descs), tuple(reqs)) if descs else None
        new_descs, new_reqs = manager.design_round(
            query, labels, key_info, knowledge, feedback, prior
        )
        if prior is None:
            descs = [new_descs[k] for k in range(1, m + 1)]
            reqs = [new_reqs[k] for k in range(1, m + 1)]
        else:
            for k, value in new_descs.items():
                if 1 <= k <= m:
                    descs[k - 1] = value
            for k, value in new_reqs.items():
                if 1 <= k <= m:
                    reqs[k - 1] = value
        if review_rounds == 0:
            return tuple(descs), tuple(reqs), True
        approved, feedback = evaluator.review_desc_reqs(descs, reqs, "creative generation")
        if approved:
            return tuple(descs), tuple(reqs), True
    logger.warning(
        "description/requirement review never approved after %d rounds", review_rounds
    )
    return tuple(descs), tuple(reqs), False
