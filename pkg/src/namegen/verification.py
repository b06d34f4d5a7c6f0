"""Rule-based accuracy gate.

Deterministic, backend-free checks of a generated output against the
retrieved knowledge, the corpus, and the user query. The gate exists to
catch fabricated citations before any quality scoring happens; it trades a
few false positives (quotes that were never meant as poem citations) for
zero false negatives on real fabrications.

The default rule set targets the Chinese naming task; the registry lets
other task types swap in their own rules.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Mapping

from .core import CreativeOutput, RegenFlag, UserQuery, ValidationError
from .corpus import Corpus, RetrievedKnowledge

#: Quote delimiters used in the corpus language.
_QUOTE_RE = re.compile(r"「([^」]*)」|“([^”]*)”")

#: Markers that attribute a character or phrase to a source.
_SOURCE_MARKER_RE = re.compile(r"出自|取自|源自|来自")

#: Poet name (2-4 CJK chars) directly preceding a 《title》, optionally
#: linked with 的. Lazy so the connector stays out of the name chunk.
_ATTRIBUTION_RE = re.compile(r"([一-鿿]{2,4}?)(的)?《([^》]+)》")

_TITLE_RE = re.compile(r"《([^》]+)》")

_SENTENCE_SPLIT_RE = re.compile(r"[。！？!?；;\n]")

#: Quoted spans at least this long are treated as verse quotes; shorter ones
#: are character/name mentions.
MIN_VERSE_QUOTE_LEN = 4


@dataclass(frozen=True, slots=True)
class RuleViolation:
    rule_id: str
    detail: str


@dataclass(frozen=True, slots=True)
class AccReport:
    passed: bool
    violations: tuple[RuleViolation, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "violations", tuple(self.violations))
        if self.passed != (len(self.violations) == 0):
            raise ValidationError("passed flag must mirror an empty violation list")


@dataclass(frozen=True, slots=True)
class CheckContext:
    output: CreativeOutput
    knowledge: RetrievedKnowledge | None
    query: UserQuery
    corpus: Corpus | None = None


Rule = Callable[[CheckContext], list[RuleViolation]]


def quoted_spans(text: str) -> list[str]:
    return [a or b for a, b in _QUOTE_RE.findall(text) if (a or b)]


def _strip_spaces(text: str) -> str:
    return "".join(text.split())


def _known_lines(ctx: CheckContext) -> set[str]:
    lines: set[str] = set()
    if ctx.knowledge is not None:
        lines.update(ctx.knowledge.record.content)
    if ctx.corpus is not None:
        lines.update(ctx.corpus.all_lines())
    return {_strip_spaces(line) for line in lines}


def verse_in_lines(verse: str, lines: set[str]) -> bool:
    """A quote verifies if it equals a known line or is contained in one."""
    needle = _strip_spaces(verse)
    return bool(needle) and any(needle in line for line in lines)


def rule_quotes_verbatim(ctx: CheckContext) -> list[RuleViolation]:
    """R1: every quoted verse must appear in the retrieved poem or corpus."""
    lines = _known_lines(ctx)
    violations = []
    for explanation in ctx.output.explanations:
        for span in quoted_spans(explanation):
            if len(_strip_spaces(span)) < MIN_VERSE_QUOTE_LEN:
                continue
            if not verse_in_lines(span, lines):
                violations.append(
                    RuleViolation("R1", f"quoted verse not found in any source: 「{span}」")
                )
    return violations


def rule_chars_in_cited_verse(ctx: CheckContext) -> list[RuleViolation]:
    """R2: a character claimed to come from a verse must occur in it."""
    violations = []
    for explanation in ctx.output.explanations:
        for sentence in _SENTENCE_SPLIT_RE.split(explanation):
            if not _SOURCE_MARKER_RE.search(sentence):
                continue
            spans = quoted_spans(sentence)
            mentions = [s for s in spans if 0 < len(_strip_spaces(s)) < MIN_VERSE_QUOTE_LEN]
            verses = [s for s in spans if len(_strip_spaces(s)) >= MIN_VERSE_QUOTE_LEN]
            if not verses and ctx.knowledge is not None:
                verses = list(ctx.knowledge.record.content)
            if not verses:
                continue
            pool = "".join(verses)
            for mention in mentions:
                missing = [c for c in _strip_spaces(mention) if c not in pool]
                if missing:
                    violations.append(
                        RuleViolation(
                            "R2",
                            f"character(s) {''.join(missing)!r} claimed to come from "
                            f"a verse that does not contain them: 「{mention}」",
                        )
                    )
    return violations


def rule_surname_prefix(ctx: CheckContext) -> list[RuleViolation]:
    """R3: the result must begin with the user-supplied surname."""
    surname = ctx.query.surname
    if surname and not ctx.output.result.startswith(surname):
        return [
            RuleViolation(
                "R3",
                f"result {ctx.output.result!r} does not begin with surname {surname!r}",
            )
        ]
    return []


def rule_given_name_length(ctx: CheckContext) -> list[RuleViolation]:
    """R4: the given name is 1-2 characters once the surname is removed."""
    surname = ctx.query.surname
    if not surname or not ctx.output.result.startswith(surname):
        return []
    given = ctx.output.result[len(surname):].strip()
    if not 1 <= len(given) <= 2:
        return [
            RuleViolation(
                "R4", f"given name {given!r} must be 1-2 characters, got {len(given)}"
            )
        ]
    return []


def _find_record_by_title(ctx: CheckContext, title: str):
    if ctx.knowledge is not None and ctx.knowledge.record.title == title:
        return ctx.knowledge.record
    if ctx.corpus is not None:
        for record in ctx.corpus:
            if record.title == title:
                return record
    return None


def rule_attribution_matches(ctx: CheckContext) -> list[RuleViolation]:
    """R5: poet/title attributions must match the corpus record.

    A chunk before 《title》 counts as a poet attribution when it is linked
    with 的 or ends with a poet known from the sources; plain prose before a
    title mention is ignored.
    """
    known_poets = set()
    if ctx.knowledge is not None:
        known_poets.add(ctx.knowledge.record.poet)
    if ctx.corpus is not None:
        known_poets.update(r.poet for r in ctx.corpus)
    known_poets.discard("")

    violations = []
    for explanation in ctx.output.explanations:
        for sentence in _SENTENCE_SPLIT_RE.split(explanation):
            chunks: dict[str, tuple[str, bool]] = {}
            for chunk, de, title in _ATTRIBUTION_RE.findall(sentence):
                chunks[title] = (chunk, bool(de))
            for title in _TITLE_RE.findall(sentence):
                record = _find_record_by_title(ctx, title)
                chunk, has_de = chunks.get(title, ("", False))
                poet_named = bool(chunk) and any(
                    chunk.endswith(p) for p in known_poets
                )
                poet_like = poet_named or (bool(chunk) and has_de)
                if record is None:
                    if poet_named or _SOURCE_MARKER_RE.search(sentence):
                        violations.append(
                            RuleViolation(
                                "R5",
                                f"attributed title not found in any source: 《{title}》",
                            )
                        )
                    continue
                if chunk and chunk.endswith(record.poet):
                    continue
                if poet_like:
                    violations.append(
                        RuleViolation(
                            "R5", f"《{title}》 is by {record.poet}, not {chunk!r}"
                        )
                    )
    return violations


def default_rules() -> dict[str, Rule]:
    """The rule registry for the naming task, keyed by rule id."""
    return {
        "R1": rule_quotes_verbatim,
        "R2": rule_chars_in_cited_verse,
        "R3": rule_surname_prefix,
        "R4": rule_given_name_length,
        "R5": rule_attribution_matches,
    }


def f_acc(
    output: CreativeOutput,
    knowledge: RetrievedKnowledge | None,
    query: UserQuery,
    corpus: Corpus | None = None,
    rules: Mapping[str, Rule] | None = None,
) -> tuple[RegenFlag, AccReport]:
    """Run the accuracy gate.

    Returns REGENERATE with the violation list as feedback when any rule
    fires, UNSET (gate passed, final verdict pending) otherwise.
    """
    active = rules if rules is not None else default_rules()
    ctx = CheckContext(output=output, knowledge=knowledge, query=query, corpus=corpus)
    violations: list[RuleViolation] = []
    for rule_id in sorted(active):
        violations.extend(active[rule_id](ctx))
    report = AccReport(passed=not violations, violations=tuple(violations))
    flag = RegenFlag.UNSET if report.passed else RegenFlag.REGENERATE
    return flag, report


def verify_claim(
    verse: str,
    title: str,
    knowledge: RetrievedKnowledge | None,
    corpus: Corpus | None,
) -> bool:
    """Check one extracted citation claim against the sources.

    With a title, the verse must occur in that specific record; without one,
    any known line may verify it.
    """
    if not verse.strip():
        return False
    if title.strip():
        ctx = CheckContext(
            output=CreativeOutput(result="-", explanations=("-",)),
            knowledge=knowledge,
            query=UserQuery(raw_text="-"),
            corpus=corpus,
        )
        record = _find_record_by_title(ctx, title.strip())
        if record is None:
            return False
        lines = {_strip_spaces(line) for line in record.content}
        return verse_in_lines(verse, lines)
    lines = set()
    if knowledge is not None:
        lines.update(_strip_spaces(line) for line in knowledge.record.content)
    if corpus is not None:
        lines.update(_strip_spaces(line) for line in corpus.all_lines())
    return verse_in_lines(verse, lines)
