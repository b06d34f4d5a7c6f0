from __future__ import annotations

import hashlib
import json
import random

import numpy as np
import pytest

from namegen.core import ValidationError
from namegen.corpus import (
    Corpus,
    CorpusError,
    EmptyCorpusError,
    HashNgramEmbedder,
    PoemRecord,
    PredicateError,
    VectorIndex,
    build_index,
    coarse_filter,
    ingest,
)

from conftest import POEMS, write_corpus_file


class TestIngest:
    def test_small_sample_preserves_ids(self, tmp_path):
        path = write_corpus_file(tmp_path / "three.jsonl", POEMS[:3])
        corpus = ingest(path)
        assert [r.id for r in corpus] == ["p01", "p02", "p03"]
        assert corpus.warnings == []

    def test_one_malformed_of_ten_warns(self, tmp_path):
        path = tmp_path / "mixed.jsonl"
        lines = [json.dumps(p, ensure_ascii=False) for p in POEMS[:9]]
        lines.insert(4, "{this is not json")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        corpus = ingest(path)
        assert len(corpus) == 9
        assert len(corpus.warnings) == 1
        assert "line 5" in corpus.warnings[0]

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        with pytest.raises(EmptyCorpusError):
            ingest(path)

    def test_too_many_malformed_aborts(self, tmp_path):
        path = tmp_path / "broken.jsonl"
        lines = [json.dumps(POEMS[0], ensure_ascii=False)] + ["oops"] * 3
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(CorpusError):
            ingest(path)

    def test_duplicate_id_is_malformed_line(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        lines = [json.dumps(p, ensure_ascii=False) for p in POEMS]
        lines.append(json.dumps(POEMS[0], ensure_ascii=False))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        corpus = ingest(path)
        assert len(corpus) == len(POEMS)
        assert any("duplicate" in w for w in corpus.warnings)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorpusError):
            ingest(tmp_path / "nope.jsonl")


class TestCoarseFilter:
    def test_theme_filter(self, corpus):
        # five records holding exactly two moon poems -> exactly those two
        five = [corpus.get(rid) for rid in ("p01", "p02", "p03", "p06", "p04")]
        subset = coarse_filter(five, {"theme": "月"})
        assert [r.id for r in subset] == ["p01", "p06"]

    def test_empty_predicates_identity(self, corpus):
        assert coarse_filter(corpus.records, {}) == corpus.records

    def test_no_match_is_legal(self, corpus):
        assert coarse_filter(corpus.records, {"dynasty": "宋"}) == []

    def test_unknown_field(self, corpus):
        with pytest.raises(PredicateError):
            coarse_filter(corpus.records, {"mood": "sad"})

    def test_conjunction(self, corpus):
        subset = coarse_filter(corpus.records, {"theme": "山水", "poet": "王维"})
        assert [r.id for r in subset] == ["p06"]

    def test_content_keyword(self, corpus):
        subset = coarse_filter(corpus.records, {"content": "清晖"})
        assert [r.id for r in subset] == ["p02"]

    def test_idempotent(self, corpus):
        predicates = {"theme": "山水"}
        once = coarse_filter(corpus.records, predicates)
        twice = coarse_filter(once, predicates)
        assert once == twice


class TestEmbedder:
    def test_deterministic(self, embedder):
        a = embedder.embed("明月清风")
        b = embedder.embed("明月清风")
        assert np.array_equal(a, b)

    def test_identical_text_cosine_one(self, embedder):
        a = embedder.embed("月")
        b = embedder.embed("月")
        assert abs(float(a @ b) - 1.0) < 1e-9

    def test_shared_ngrams_score_higher(self, embedder):
        # overlapping pair shares characters and bigrams; disjoint pair none
        anchor = embedder.embed("山水含清晖")
        close = embedder.embed("清晖能娱人")
        far = embedder.embed("锄禾日当午")
        assert float(anchor @ close) > float(anchor @ far)

    def test_unit_norm(self, embedder):
        vec = embedder.embed("床前明月光")
        assert abs(float(np.linalg.norm(vec)) - 1.0) < 1e-9

    def test_empty_text_rejected(self, embedder):
        with pytest.raises(ValidationError):
            embedder.embed("   ")

    def test_seed_changes_embedding(self):
        a = HashNgramEmbedder(dim=64, seed=0).embed("明月")
        b = HashNgramEmbedder(dim=64, seed=1).embed("明月")
        assert not np.array_equal(a, b)


def brute_force_top_k(index: VectorIndex, query: np.ndarray, k: int, subset=None):
    """Oracle: score every pair, full sort by (-score, id), take prefix."""
    q = query / np.linalg.norm(query)
    wanted = set(subset) if subset is not None else set(index.ids)
    scored = []
    for i, rid in enumerate(index.ids):
        if rid in wanted:
            scored.append((rid, float(index.matrix[i] @ q)))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


class TestTopK:
    def test_self_match_scores_one(self, corpus, embedder, index):
        query = embedder.embed(corpus.get("p05").text())
        ranked = index.top_k(query, k=1)
        assert ranked[0][0] == "p05"
        assert abs(ranked[0][1] - 1.0) < 1e-9

    def test_orthogonal_query_scores_zero(self):
        index = VectorIndex(
            ids=["a", "b"],
            matrix=np.array([[1.0, 0.0], [0.0, 1.0]]),
            dim=2,
            fingerprint="test",
        )
        ranked = index.top_k(np.array([0.0, 1.0]), k=2)
        assert ranked[0] == ("b", 1.0)
        assert abs(ranked[1][1]) < 1e-12

    def test_ties_break_by_ascending_id(self):
        matrix = np.array([[1.0, 0.0]] * 3)
        index = VectorIndex(ids=["c", "a", "b"], matrix=matrix, dim=2, fingerprint="t")
        ranked = index.top_k(np.array([1.0, 0.0]), k=3)
        assert [rid for rid, _ in ranked] == ["a", "b", "c"]

    def test_random_subsets_match_oracle(self):
        rng = random.Random(42)
        n, dim = 50, 16
        ids = [f"r{i:03d}" for i in range(n)]
        matrix = np.zeros((n, dim))
        for i in range(n):
            row = np.array([rng.gauss(0, 1) for _ in range(dim)])
            matrix[i] = row / np.linalg.norm(row)
        index = VectorIndex(ids=ids, matrix=matrix, dim=dim, fingerprint="t")
        for _ in range(20):
            subset = rng.sample(ids, rng.randint(1, n))
            query = np.array([rng.gauss(0, 1) for _ in range(dim)])
            k = rng.randint(1, 8)
            got = index.top_k(query, k, subset=subset)
            want = brute_force_top_k(index, query, k, subset)
            assert [rid for rid, _ in got] == [rid for rid, _ in want]
            assert np.allclose(
                [s for _, s in got], [s for _, s in want], atol=1e-12
            )

    def test_returns_min_k_subset(self, index, embedder):
        ranked = index.top_k(embedder.embed("月"), k=99, subset=["p01", "p02"])
        assert len(ranked) == 2

    def test_dimension_mismatch(self, index):
        with pytest.raises(Exception):
            index.top_k(np.zeros(3), k=1)


class TestIndexRoundTrip:
    def test_save_load_identical_results(self, corpus, embedder, index, tmp_path):
        path = tmp_path / "index.jsonl"
        index.save(path)
        loaded = VectorIndex.load(path)
        assert loaded.fingerprint == index.fingerprint
        query = embedder.embed("明月清泉")
        assert loaded.top_k(query, k=5) == index.top_k(query, k=5)

    def test_rebuild_same_digest(self, corpus, embedder, tmp_path):
        paths = []
        for name in ("a.jsonl", "b.jsonl"):
            idx = build_index(corpus, embedder)
            path = tmp_path / name
            idx.save(path)
            paths.append(hashlib.sha256(path.read_bytes()).hexdigest())
        assert paths[0] == paths[1]


class TestRecordValidation:
    def test_poem_needs_content(self):
        with pytest.raises(ValidationError):
            PoemRecord(id="x", poet="p", dynasty="d", title="t", content=())

    def test_corpus_rejects_duplicate_ids(self, poem_records):
        with pytest.raises(ValidationError):
            Corpus(records=poem_records + [poem_records[0]])
