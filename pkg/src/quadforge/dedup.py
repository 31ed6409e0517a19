"""Near-duplicate detection and train/test decontamination.

Two complementary detectors: exact 12-gram shingle overlap (any shared window
of n tokens means contamination) and embedding cosine similarity above a
threshold. Tokenization is case-folded, with Latin words split on whitespace
and punctuation and every CJK character its own token. Dedup text is
question + answer; thinking traces are excluded because model-generated
boilerplate in traces causes false positives.

Pair detection is exact all-pairs up to ``EXACT_PAIR_LIMIT`` records. Above
that, candidates are blocked by deterministic random-hyperplane signatures
(four independent 8-plane projections; pairs sharing any bucket are scored
exactly), which bounds the pair space while keeping recall high for
near-identical vectors.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from .records import QaRecord

DEFAULT_NGRAM = 12
DEFAULT_COSINE_THRESHOLD = 0.92
EXACT_PAIR_LIMIT = 10_000

_CJK = r"㐀-䶿一-鿿豈-﫿"
_TOKEN_RE = re.compile(rf"([{_CJK}])|([^\W_{_CJK}]+)")


def tokenize(text: str) -> list[str]:
    """Case-folded tokens: Latin/digit runs as words, each CJK char alone."""
    return [m.group(0) for m in _TOKEN_RE.finditer(text.casefold())]


def _hash_window(window: Sequence[str]) -> int:
    digest = hashlib.blake2b(
        "\x1f".join(window).encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big")


@dataclass
class ShingleSet:
    record_id: str
    shingles: set[int]
    token_count: int


def shingles(text: str, n: int = DEFAULT_NGRAM, record_id: str = "") -> ShingleSet:
    """Hashed sliding n-token windows; empty when the text has < n tokens."""
    if n < 1:
        raise ValueError("n must be >= 1")
    tokens = tokenize(text)
    hashed = {
        _hash_window(tokens[i : i + n]) for i in range(len(tokens) - n + 1)
    }
    return ShingleSet(record_id=record_id, shingles=hashed, token_count=len(tokens))


def ngram_duplicate(a: ShingleSet, b: ShingleSet) -> bool:
    """True iff the sets share any window. Symmetric by construction."""
    return bool(a.shingles & b.shingles)


@dataclass
class DuplicatePair:
    record_id_a: str
    record_id_b: str
    method: str  # ngram | embedding
    evidence: float  # shared-shingle count or cosine value

    def __post_init__(self):
        if self.record_id_a == self.record_id_b:
            raise ValueError("a record never pairs with itself")
        if self.record_id_a > self.record_id_b:  # unordered: canonical order
            self.record_id_a, self.record_id_b = self.record_id_b, self.record_id_a

    def key(self) -> tuple[str, str, str]:
        return (self.record_id_a, self.record_id_b, self.method)

    def to_dict(self) -> dict:
        return {
            "record_id_a": self.record_id_a,
            "record_id_b": self.record_id_b,
            "method": self.method,
            "evidence": self.evidence,
        }


# --- embedding backends ---


class EmbeddingBackend(Protocol):
    name: str

    def embed(self, texts: list[str]) -> np.ndarray: ...


def _normalize(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return matrix / norms


class MockEmbeddingBackend:
    """Planted unit vectors per exact text; unknown texts get deterministic
    dense pseudo-random fallbacks, which are near-orthogonal to everything."""

    name = "mock_embedding"

    def __init__(self, vectors: dict[str, Sequence[float]], dim: int = 0,
                 fail_texts: Optional[set[str]] = None):
        self.vectors = {k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
        planted = max((v.shape[0] for v in self.vectors.values()), default=0)
        self.dim = max(dim, planted, 256)
        self.fail_texts = fail_texts or set()

    def embed(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            if text in self.fail_texts:
                raise RuntimeError(f"scripted embedding failure for {text[:30]!r}")
            if text in self.vectors:
                vec = self.vectors[text]
                out[i, : vec.shape[0]] = vec
            else:
                seed = int(hashlib.blake2b(text.encode("utf-8"), digest_size=8).hexdigest(), 16)
                out[i] = np.random.default_rng(seed).standard_normal(self.dim)
        return _normalize(out)


class HashingEmbeddingBackend:
    """Deterministic char-3-gram hashing embedder: no model, no network.
    Identical texts embed identically (cosine 1.0); heavy n-gram overlap
    scores high. The offline default for the CLI."""

    name = "hashing_embedding"

    def __init__(self, dim: int = 256):
        self.dim = dim

    def embed(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            t = re.sub(r"\s+", " ", text.casefold().strip())
            for j in range(max(1, len(t) - 2)):
                gram = t[j : j + 3]
                h = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
                idx = int.from_bytes(h, "big")
                out[i, idx % self.dim] += 1.0
        return _normalize(out)


class SentenceTransformerBackend:
    """Adapter over sentence-transformers, when installed and a model is
    available locally."""

    name = "sentence_transformer"

    def __init__(self, model_name: str = "all-MiniLM-L6-v2"):
        from sentence_transformers import SentenceTransformer

        self._model = SentenceTransformer(model_name)

    def embed(self, texts: list[str]) -> np.ndarray:
        vectors = self._model.encode(texts, convert_to_numpy=True, show_progress_bar=False)
        return _normalize(np.asarray(vectors, dtype=np.float64))


# --- semantic pair detection ---


def dedup_text(record: QaRecord) -> str:
    return f"{record.question}\n{record.answer}"


def _embed_with_fallback(
    backend: EmbeddingBackend, ids: list[str], texts: list[str]
) -> tuple[np.ndarray, list[int], list[str]]:
    """Embed texts one batch, falling back to per-text on failure. Returns
    (matrix over succeeded rows, succeeded positions, failed record ids)."""
    try:
        return _normalize(backend.embed(texts)), list(range(len(texts))), []
    except Exception:
        pass
    rows: list[np.ndarray] = []
    kept: list[int] = []
    failed: list[str] = []
    for i, text in enumerate(texts):
        try:
            rows.append(backend.embed([text])[0])
            kept.append(i)
        except Exception:
            failed.append(ids[i])
    if rows:
        return _normalize(np.vstack(rows)), kept, failed
    return np.zeros((0, 1)), [], failed


def _hyperplane_buckets(matrix: np.ndarray, seed: int = 7) -> list[dict[int, list[int]]]:
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(4):
        planes = rng.standard_normal((matrix.shape[1], 8))
        bits = (matrix @ planes) > 0
        keys = np.packbits(bits, axis=1)[:, 0]
        buckets: dict[int, list[int]] = {}
        for idx, key in enumerate(keys):
            buckets.setdefault(int(key), []).append(idx)
        blocks.append(buckets)
    return blocks


def _candidate_pairs(matrix: np.ndarray) -> set[tuple[int, int]]:
    n = matrix.shape[0]
    if n <= EXACT_PAIR_LIMIT:
        return {(i, j) for i in range(n) for j in range(i + 1, n)}
    pairs: set[tuple[int, int]] = set()
    for buckets in _hyperplane_buckets(matrix):
        for members in buckets.values():
            for ai in range(len(members)):
                for bi in range(ai + 1, len(members)):
                    pairs.add((members[ai], members[bi]))
    return pairs


def semantic_duplicates(
    records: list[tuple[str, str]],
    backend: EmbeddingBackend,
    cosine_threshold: float = DEFAULT_COSINE_THRESHOLD,
) -> tuple[list[DuplicatePair], list[str]]:
    """All (id, text) pairs with cosine >= threshold. Returns (pairs,
    record ids whose embedding failed and were skipped)."""
    if not 0.0 < cosine_threshold <= 1.0:
        raise ValueError("cosine threshold must be in (0, 1]")
    ids = [r[0] for r in records]
    texts = [r[1] for r in records]
    matrix, kept, failed = _embed_with_fallback(backend, ids, texts)
    pairs: list[DuplicatePair] = []
    seen: set[tuple[str, str, str]] = set()
    for i, j in sorted(_candidate_pairs(matrix)):
        cos = float(matrix[i] @ matrix[j])
        if cos >= cosine_threshold:
            id_a, id_b = ids[kept[i]], ids[kept[j]]
            if id_a == id_b:
                continue
            pair = DuplicatePair(id_a, id_b, "embedding", round(cos, 6))
            if pair.key() not in seen:
                seen.add(pair.key())
                pairs.append(pair)
    return pairs, failed


# --- decontamination ---


@dataclass
class DecontaminationReport:
    pairs: list[DuplicatePair] = field(default_factory=list)
    removed_train_ids: list[str] = field(default_factory=list)
    undeduplicated_ids: list[str] = field(default_factory=list)

    def to_rows(self) -> list[dict]:
        return [p.to_dict() for p in self.pairs]


def decontaminate(
    train_records: list[QaRecord],
    test_records: list[QaRecord],
    n: int = DEFAULT_NGRAM,
    cosine_threshold: float = DEFAULT_COSINE_THRESHOLD,
    backend: Optional[EmbeddingBackend] = None,
    *,
    within_train: bool = False,
) -> tuple[list[QaRecord], DecontaminationReport]:
    """Remove every train record that n-gram- or embedding-duplicates any test
    record. Test records are authoritative and never removed."""
    backend = backend or HashingEmbeddingBackend()
    report = DecontaminationReport()
    contaminated: set[str] = set()

    test_shingles = [
        shingles(dedup_text(r), n, record_id=r.record_id) for r in test_records
    ]
    lookup: dict[int, set[str]] = {}
    for s in test_shingles:
        for h in s.shingles:
            lookup.setdefault(h, set()).add(s.record_id)

    for rec in train_records:
        s = shingles(dedup_text(rec), n, record_id=rec.record_id)
        hits: dict[str, int] = {}
        for h in s.shingles:
            for test_id in lookup.get(h, ()):
                hits[test_id] = hits.get(test_id, 0) + 1
        for test_id, shared in sorted(hits.items()):
            contaminated.add(rec.record_id)
            if test_id != rec.record_id:
                report.pairs.append(
                    DuplicatePair(rec.record_id, test_id, "ngram", float(shared))
                )

    train_items = [(r.record_id, dedup_text(r)) for r in train_records]
    test_items = [(r.record_id, dedup_text(r)) for r in test_records]
    sem_pairs, failed = _cross_semantic(
        train_items, test_items, backend, cosine_threshold
    )
    report.undeduplicated_ids = failed
    train_ids = {r.record_id for r in train_records}
    seen = {p.key() for p in report.pairs}
    for pair in sem_pairs:
        for rid in (pair.record_id_a, pair.record_id_b):
            if rid in train_ids:
                contaminated.add(rid)
        if pair.key() not in seen:
            seen.add(pair.key())
            report.pairs.append(pair)

    if within_train:
        pairs, failed2 = semantic_duplicates(train_items, backend, cosine_threshold)
        report.undeduplicated_ids.extend(failed2)
        shingle_map = {
            r.record_id: shingles(dedup_text(r), n) for r in train_records
        }
        order = [r.record_id for r in train_records]
        position = {rid: i for i, rid in enumerate(order)}
        for i, rid_a in enumerate(order):
            for rid_b in order[i + 1 :]:
                if rid_a == rid_b:
                    continue
                if ngram_duplicate(shingle_map[rid_a], shingle_map[rid_b]):
                    shared = len(
                        shingle_map[rid_a].shingles & shingle_map[rid_b].shingles
                    )
                    pairs.append(DuplicatePair(rid_a, rid_b, "ngram", float(shared)))
        for pair in pairs:
            later = max(
                pair.record_id_a, pair.record_id_b, key=lambda r: position.get(r, -1)
            )
            if later in train_ids:
                contaminated.add(later)
            if pair.key() not in seen:
                seen.add(pair.key())
                report.pairs.append(pair)

    kept = [r for r in train_records if r.record_id not in contaminated]
    report.removed_train_ids = sorted(contaminated)
    return kept, report


def _cross_semantic(
    train_items: list[tuple[str, str]],
    test_items: list[tuple[str, str]],
    backend: EmbeddingBackend,
    threshold: float,
) -> tuple[list[DuplicatePair], list[str]]:
    """Exact train x test cosine (chunked); the pair space is the product of
    set sizes, so the blocking path of semantic_duplicates is not needed at
    desk scale."""
    if not train_items or not test_items:
        return [], []
    train_ids = [t[0] for t in train_items]
    test_ids = [t[0] for t in test_items]
    train_m, train_kept, failed_a = _embed_with_fallback(
        backend, train_ids, [t[1] for t in train_items]
    )
    test_m, test_kept, failed_b = _embed_with_fallback(
        backend, test_ids, [t[1] for t in test_items]
    )
    pairs: list[DuplicatePair] = []
    if train_m.shape[0] and test_m.shape[0]:
        chunk = 1024
        for start in range(0, train_m.shape[0], chunk):
            block = train_m[start : start + chunk] @ test_m.T
            hit_rows, hit_cols = np.where(block >= threshold)
            for r, c in zip(hit_rows.tolist(), hit_cols.tolist()):
                id_a = train_ids[train_kept[start + r]]
                id_b = test_ids[test_kept[c]]
                if id_a == id_b:
                    continue
                pairs.append(
                    DuplicatePair(id_a, id_b, "embedding", round(float(block[r, c]), 6))
                )
    return pairs, failed_a + failed_b
