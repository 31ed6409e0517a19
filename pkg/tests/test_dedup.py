from __future__ import annotations

import random

import numpy as np
import pytest

from quadforge.dedup import (
    DuplicatePair,
    HashingEmbeddingBackend,
    MockEmbeddingBackend,
    decontaminate,
    dedup_text,
    ngram_duplicate,
    semantic_duplicates,
    shingles,
    tokenize,
)
from quadforge.records import make_record

PROV = {"doc_id": "d", "page_index": 0, "source_kind": "book", "eval_pool": False}


def _rec(question, answer="ok"):
    return make_record("text", "dialogue", question, answer, provenance=dict(PROV))


def _tokens(n, prefix="w"):
    return " ".join(f"{prefix}{i}" for i in range(n))


# --- tokenization ---


def test_tokenize_latin_words():
    assert tokenize("The Probe, held FIRMLY!") == ["the", "probe", "held", "firmly"]


def test_tokenize_cjk_chars_individually():
    assert tokenize("超声检查") == ["超", "声", "检", "查"]


def test_tokenize_mixed():
    assert tokenize("liver超声scan") == ["liver", "超", "声", "scan"]


# --- shingles ---


def test_exactly_twelve_tokens_one_shingle():
    s = shingles(_tokens(12), 12)
    assert len(s.shingles) == 1
    assert s.token_count == 12


def test_eleven_tokens_empty():
    s = shingles(_tokens(11), 12)
    assert s.shingles == set()


def test_twenty_tokens_nine_shingles():
    text = _tokens(20)
    s = shingles(text, 12)
    # brute-force window enumeration oracle
    toks = text.split()
    expected = {tuple(toks[i : i + 12]) for i in range(len(toks) - 11)}
    assert len(s.shingles) == len(expected) == 9


def test_shingles_deterministic():
    assert shingles("a b c d", 2).shingles == shingles("a b c d", 2).shingles


def test_shingle_count_bounded_by_windows():
    rng = random.Random(5)
    for _ in range(200):
        n_tokens = rng.randint(0, 40)
        text = " ".join(rng.choice(["alpha", "beta", "gamma"]) for _ in range(n_tokens))
        s = shingles(text, 12)
        assert len(s.shingles) <= max(0, s.token_count - 11)


def test_collision_rate_on_large_shingle_set():
    # 1e5 distinct windows through the 64-bit hash: zero collisions expected
    seen = set()
    for i in range(100_000):
        s = shingles(" ".join(f"t{i}w{j}" for j in range(12)), 12)
        (h,) = s.shingles
        seen.add(h)
    assert len(seen) == 100_000


# --- ngram duplicates ---


def test_identical_texts_are_duplicates():
    a = shingles(_tokens(30), 12)
    b = shingles(_tokens(30), 12)
    assert ngram_duplicate(a, b)
    assert ngram_duplicate(a, a)  # reflexive above n tokens


def test_eleven_token_shared_run_not_duplicate():
    shared = _tokens(11, "s")
    a = shingles(f"{_tokens(12, 'a')} {shared}", 12)
    b = shingles(f"{_tokens(12, 'b')} {shared}", 12)
    assert not ngram_duplicate(a, b)


def test_embedded_twelve_token_quote_is_duplicate():
    quote = _tokens(12, "q")
    a = shingles(f"{_tokens(8, 'a')} {quote} {_tokens(5, 'x')}", 12)
    b = shingles(f"{_tokens(15, 'b')} {quote}", 12)
    assert ngram_duplicate(a, b)
    assert ngram_duplicate(b, a)  # symmetric


# --- duplicate pairs ---


def test_pair_never_self():
    with pytest.raises(ValueError):
        DuplicatePair("same", "same", "ngram", 1.0)


def test_pair_canonical_order():
    pair = DuplicatePair("zebra", "apple", "ngram", 1.0)
    assert (pair.record_id_a, pair.record_id_b) == ("apple", "zebra")


# --- semantic duplicates ---


def test_identical_texts_cosine_one():
    backend = HashingEmbeddingBackend()
    pairs, failed = semantic_duplicates(
        [("r1", "the liver appears normal"), ("r2", "the liver appears normal")],
        backend,
        cosine_threshold=0.99,
    )
    assert failed == []
    assert len(pairs) == 1
    assert pairs[0].evidence >= 0.99


def test_orthogonal_mock_vectors_no_pair():
    backend = MockEmbeddingBackend({"a": [1, 0, 0], "b": [0, 1, 0]})
    pairs, _ = semantic_duplicates([("r1", "a"), ("r2", "b")], backend, 0.5)
    assert pairs == []


def test_planted_cosine_095_with_threshold_092():
    v = float(np.sqrt(1 - 0.95**2))
    backend = MockEmbeddingBackend(
        {"a": [1.0, 0.0], "b": [0.95, v], "c": [0.0, 1.0]}
    )
    pairs, _ = semantic_duplicates(
        [("r1", "a"), ("r2", "b"), ("r3", "c")], backend, cosine_threshold=0.92
    )
    assert len(pairs) == 1
    assert {pairs[0].record_id_a, pairs[0].record_id_b} == {"r1", "r2"}
    assert pairs[0].evidence == pytest.approx(0.95, abs=1e-6)


def test_embedding_failure_flags_records_and_continues():
    backend = MockEmbeddingBackend({"a": [1, 0]}, fail_texts={"bad text"})
    pairs, failed = semantic_duplicates(
        [("r1", "a"), ("r2", "bad text"), ("r3", "a")], backend, 0.99
    )
    assert failed == ["r2"]
    assert len(pairs) == 1  # r1-r3 still detected


def test_threshold_validation():
    backend = HashingEmbeddingBackend()
    with pytest.raises(ValueError):
        semantic_duplicates([("r1", "x")], backend, 0.0)


# --- decontamination ---


def test_disjoint_sets_zero_removals():
    train = [_rec(f"train question {_tokens(20, f'tr{i}')}") for i in range(5)]
    test = [_rec(f"test question {_tokens(20, f'te{i}')}") for i in range(3)]
    kept, report = decontaminate(train, test)
    assert len(kept) == 5
    assert report.removed_train_ids == []
    assert report.pairs == []


def test_planted_copy_removed_from_train_not_test():
    shared = _tokens(20, "dup")
    train = [_rec(shared), _rec(_tokens(20, "tr"))]
    test = [_rec(shared)]
    kept, report = decontaminate(train, test)
    assert len(kept) == 1
    assert kept[0].question.startswith("tr0")
    # report names the removed train record
    assert report.removed_train_ids == [train[0].record_id]


def test_semantic_only_contamination_attributed_to_embedding():
    train = [_rec(_tokens(20, "tr"))]
    test = [_rec(_tokens(20, "te"))]
    backend = MockEmbeddingBackend(
        {dedup_text(train[0]): [1.0, 0.0], dedup_text(test[0]): [0.97, float(np.sqrt(1 - 0.97**2))]}
    )
    kept, report = decontaminate(train, test, backend=backend)
    assert kept == []
    assert len(report.pairs) == 1
    assert report.pairs[0].method == "embedding"


def test_within_train_dedup_behind_flag():
    shared = _tokens(25, "dup")
    train = [_rec(shared, "ok1"), _rec(shared, "ok2"), _rec(_tokens(20, "tr"))]
    test = [_rec(_tokens(20, "te"))]
    kept_off, _ = decontaminate(train, test)
    assert len(kept_off) == 3  # default off
    kept_on, report = decontaminate(train, test, within_train=True)
    assert len(kept_on) == 2
    assert len(report.removed_train_ids) == 1


def test_traces_excluded_from_dedup_text():
    rec = make_record(
        "text", "diagnostic", "Q tokens here", "A tokens",
        thinking_trace=_tokens(30, "trace"), provenance=dict(PROV),
    )
    assert "trace0" not in dedup_text(rec)
