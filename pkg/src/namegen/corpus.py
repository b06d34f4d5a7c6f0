"""Classical-poetry corpus ingestion and exact cosine search.

The corpus file is UTF-8 JSON-lines, one record per line with keys
{id, poet, dynasty, title, content (array of verse lines), interpretation,
theme (array of tags)}. Search is an exact flat scan over L2-normalized
embeddings; at corpus scale (a few hundred thousand entries) that is fast
enough and keeps results bit-reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .core import NamegenError, ValidationError

#: Ingestion aborts when more than this fraction of lines is malformed.
MAX_MALFORMED_FRACTION = 0.10

INDEX_FORMAT_VERSION = 1

#: Metadata fields usable in coarse-filter predicates.
FILTERABLE_FIELDS = ("theme", "dynasty", "poet", "title", "content")


class CorpusError(NamegenError):
    """Corpus file missing, empty, or too damaged to use."""


class EmptyCorpusError(CorpusError):
    pass


class PredicateError(NamegenError, ValueError):
    """A coarse-filter predicate references an unknown metadata field."""


class IndexError_(NamegenError):
    """Vector index is inconsistent with the query or provider."""


@dataclass(frozen=True, slots=True)
class PoemRecord:
    id: str
    poet: str
    dynasty: str
    title: str
    content: tuple[str, ...]
    interpretation: str = ""
    theme: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "content", tuple(self.content))
        object.__setattr__(self, "theme", tuple(self.theme))
        if not self.id:
            raise ValidationError("poem id must be non-empty")
        if not self.content:
            raise ValidationError("poem content must be non-empty")

    def text(self) -> str:
        """The searchable text of the record: title, verses, interpretation,
        and theme tags."""
        parts = [self.title, *self.content, self.interpretation, " ".join(self.theme)]
        return "\n".join(p for p in parts if p)


@dataclass(frozen=True, slots=True)
class RetrievedKnowledge:
    """One selected poem plus the selector's rationale."""

    record: PoemRecord
    rationale: str = ""
    score: float | None = None


@dataclass(slots=True)
class Corpus:
    records: list[PoemRecord]
    warnings: list[str] = field(default_factory=list)
    _by_id: dict[str, PoemRecord] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._by_id = {r.id: r for r in self.records}
        if len(self._by_id) != len(self.records):
            raise ValidationError("duplicate record ids in corpus")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def get(self, record_id: str) -> PoemRecord | None:
        return self._by_id.get(record_id)

    def all_lines(self) -> set[str]:
        """Every verse line in the corpus (used by the accuracy gate)."""
        return {line for r in self.records for line in r.content}


def _parse_record(obj: Mapping) -> PoemRecord:
    return PoemRecord(
        id=str(obj["id"]),
        poet=str(obj.get("poet", "")),
        dynasty=str(obj.get("dynasty", "")),
        title=str(obj.get("title", "")),
        content=tuple(str(line) for line in obj["content"]),
        interpretation=str(obj.get("interpretation", "")),
        theme=tuple(str(t) for t in obj.get("theme", ())),
    )


def ingest(path: str | Path) -> Corpus:
    """Load a JSON-lines corpus file.

    Malformed lines (bad JSON, missing keys, duplicate ids) are skipped and
    reported with their line numbers in Corpus.warnings; more than 10%
    malformed lines aborts with CorpusError.
    """
    path = Path(path)
    try:
        raw_lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read corpus file {path}: {exc}") from exc

    records: list[PoemRecord] = []
    warnings: list[str] = []
    seen_ids: set[str] = set()
    considered = 0
    for lineno, line in enumerate(raw_lines, start=1):
        if not line.strip():
            continue
        considered += 1
        try:
            obj = json.loads(line)
            record = _parse_record(obj)
            if record.id in seen_ids:
                raise ValidationError(f"duplicate id {record.id!r}")
        except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as exc:
            warnings.append(f"line {lineno}: {exc}")
            continue
        seen_ids.add(record.id)
        records.append(record)

    if considered == 0 or not records:
        raise EmptyCorpusError(f"corpus file {path} contains no usable records")
    if len(warnings) / considered > MAX_MALFORMED_FRACTION:
        raise CorpusError(
            f"{len(warnings)} of {considered} lines malformed in {path}: "
            + "; ".join(warnings[:5])
        )
    return Corpus(records=records, warnings=warnings)


def coarse_filter(
    records: Iterable[PoemRecord], predicates: Mapping[str, str]
) -> list[PoemRecord]:
    """Return records satisfying the conjunction of metadata predicates.

    Supported fields: theme (tag membership), dynasty/poet/title (exact
    match), content (keyword occurs in some verse line). An empty predicate
    set is the identity; an empty result is legal.
    """
    for fieldname in predicates:
        if fieldname not in FILTERABLE_FIELDS:
            raise PredicateError(
                f"unknown predicate field {fieldname!r}; known: {FILTERABLE_FIELDS}"
            )

    def matches(record: PoemRecord) -> bool:
        for fieldname, value in predicates.items():
            if fieldname == "theme":
                if value not in record.theme:
                    return False
            elif fieldname == "content":
                if not any(value in line for line in record.content):
                    return False
            elif getattr(record, fieldname) != value:
                return False
        return True

    return [r for r in records if matches(r)]


class Embedder(Protocol):
    """Embedding provider contract: deterministic for fixed provider+input."""

    @property
    def dim(self) -> int: ...

    @property
    def fingerprint(self) -> str: ...

    def embed(self, text: str) -> np.ndarray: ...


class HashNgramEmbedder:
    """Offline test embedder: character n-grams (n=1,2) hashed into a
    fixed-dimension vector by a seeded stable hash, then L2-normalized.

    Language-agnostic and fully deterministic across processes, which makes
    index builds digest-reproducible.
    """

    def __init__(self, dim: int = 256, seed: int = 0) -> None:
        if dim < 1:
            raise ValidationError("embedding dimension must be >= 1")
        self._dim = dim
        self._seed = seed

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def fingerprint(self) -> str:
        return f"hash-ngram-v1:dim={self._dim}:seed={self._seed}"

    def _bucket(self, gram: str) -> int:
        digest = hashlib.blake2b(
            f"{self._seed}:{gram}".encode("utf-8"), digest_size=8
        ).digest()
        return int.from_bytes(digest, "big") % self._dim

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValidationError("cannot embed empty text")
        chars = [c for c in text if not c.isspace()]
        vec = np.zeros(self._dim, dtype=np.float64)
        for n in (1, 2):
            for i in range(len(chars) - n + 1):
                vec[self._bucket("".join(chars[i : i + n]))] += 1.0
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ValidationError("text produced no n-grams")
        return vec / norm


@dataclass(slots=True)
class VectorIndex:
    """Exact-cosine index: one L2-normalized row per corpus record."""

    ids: list[str]
    matrix: np.ndarray
    dim: int
    fingerprint: str

    def __post_init__(self) -> None:
        if self.matrix.shape != (len(self.ids), self.dim):
            raise IndexError_("index matrix shape does not match ids/dim")
        if not np.all(np.isfinite(self.matrix)):
            raise IndexError_("index contains non-finite values")

    def top_k(
        self,
        query_vec: np.ndarray,
        k: int,
        subset: Sequence[str] | None = None,
    ) -> list[tuple[str, float]]:
        """Top-k record ids by cosine similarity, descending; ties broken by
        ascending record id. Returns min(k, |subset|) items."""
        if k < 1:
            raise ValidationError("k must be >= 1")
        if query_vec.shape != (self.dim,):
            raise IndexError_(
                f"query dimension {query_vec.shape} does not match index dim {self.dim}"
            )
        if subset is None:
            rows = np.arange(len(self.ids))
        else:
            wanted = set(subset)
            rows = np.array(
                [i for i, rid in enumerate(self.ids) if rid in wanted], dtype=int
            )
        if rows.size == 0:
            return []
        qnorm = float(np.linalg.norm(query_vec))
        if qnorm == 0.0:
            raise ValidationError("query vector has zero norm")
        scores = self.matrix[rows] @ (query_vec / qnorm)
        ranked = sorted(
            ((float(scores[j]), self.ids[rows[j]]) for j in range(rows.size)),
            key=lambda pair: (-pair[0], pair[1]),
        )
        return [(rid, score) for score, rid in ranked[:k]]

    def save(self, path: str | Path) -> None:
        """Write the index as JSON-lines: a header line, then one row per
        record. Deterministic bytes for identical inputs."""
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            header = {
                "version": INDEX_FORMAT_VERSION,
                "dim": self.dim,
                "fingerprint": self.fingerprint,
                "count": len(self.ids),
            }
            fh.write(json.dumps(header, sort_keys=True, ensure_ascii=False) + "\n")
            for i, rid in enumerate(self.ids):
                row = {"id": rid, "vec": [float(v) for v in self.matrix[i]]}
                fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IndexError_(f"cannot read index file {path}: {exc}") from exc
        if not lines:
            raise IndexError_(f"index file {path} is empty")
        header = json.loads(lines[0])
        if header.get("version") != INDEX_FORMAT_VERSION:
            raise IndexError_(f"unsupported index version {header.get('version')!r}")
        dim = int(header["dim"])
        ids: list[str] = []
        vectors: list[list[float]] = []
        for line in lines[1:]:
            if not line.strip():
                continue
            row = json.loads(line)
            ids.append(str(row["id"]))
            vectors.append([float(v) for v in row["vec"]])
        if len(ids) != int(header["count"]):
            raise IndexError_("index row count does not match header")
        matrix = np.array(vectors, dtype=np.float64).reshape(len(ids), dim)
        return cls(ids=ids, matrix=matrix, dim=dim, fingerprint=str(header["fingerprint"]))


def build_index(corpus: Corpus, embedder: Embedder) -> VectorIndex:
    """Embed every corpus record (L2-normalized rows, insertion order)."""
    ids: list[str] = []
    rows: list[np.ndarray] = []
    for record in corpus:
        vec = np.asarray(embedder.embed(record.text()), dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise IndexError_(f"record {record.id} embedded to a zero vector")
        ids.append(record.id)
        rows.append(vec / norm)
    matrix = (
        np.vstack(rows) if rows else np.zeros((0, embedder.dim), dtype=np.float64)
    )
    return VectorIndex(
        ids=ids, matrix=matrix, dim=embedder.dim, fingerprint=embedder.fingerprint
    )
