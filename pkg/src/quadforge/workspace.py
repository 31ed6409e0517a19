"""Workspace layout, content hashing, and JSONL persistence helpers.

Every pipeline stage reads and writes under a single workspace directory so
runs are resumable and artifacts are easy to diff. All JSON emitted here is
UTF-8, LF-terminated, with a stable key order, which is what makes re-runs
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Iterable, Iterator

ID_LENGTH = 16  # hex chars of sha256 used for stable identifiers


def content_hash(data: bytes) -> str:
    """Full sha256 hex digest of raw bytes."""
    return hashlib.sha256(data).hexdigest()


def short_hash(data: bytes) -> str:
    return content_hash(data)[:ID_LENGTH]


def hash_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def stable_id(*parts: object) -> str:
    """Deterministic short identifier from heterogeneous parts."""
    joined = "\x1f".join(str(p) for p in parts)
    return short_hash(joined.encode("utf-8"))


def canonical_json(obj: Any) -> str:
    """Compact JSON with sorted keys; the hashing / digest serialization."""
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def json_line(obj: Any) -> str:
    """One JSONL line. Keys keep insertion order so emitted schemas stay readable."""
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)


def append_jsonl(path: str | Path, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(json_line(obj) + "\n")


def write_jsonl_atomic(path: str | Path, objs: Iterable[Any]) -> None:
    """Write a JSONL file atomically: temp file + rename, partials never visible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as f:
            for obj in objs:
                f.write(json_line(obj) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if tmp.exists():
            tmp.unlink()
        raise


def write_text_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if tmp.exists():
            tmp.unlink()
        raise


class Workspace:
    """Canonical directory layout shared by all pipeline stages."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def ensure(self) -> "Workspace":
        self.root.mkdir(parents=True, exist_ok=True)
        return self

    # --- ingest ---
    @property
    def sources_index(self) -> Path:
        return self.root / "sources.jsonl"

    @property
    def pages_dir(self) -> Path:
        return self.root / "pages"

    @property
    def pages_index(self) -> Path:
        return self.root / "pages.jsonl"

    def page_image(self, doc_id: str, page_index: int) -> Path:
        return self.pages_dir / doc_id / f"{page_index}.png"

    # --- grounding ---
    @property
    def figures_dir(self) -> Path:
        return self.root / "figures"

    @property
    def figures_index(self) -> Path:
        return self.root / "figures.jsonl"

    def figure_image(self, figure_id: str) -> Path:
        return self.figures_dir / f"{figure_id}.png"

    @property
    def debug_dir(self) -> Path:
        return self.root / "debug"

    # --- gateway ---
    @property
    def cache_dir(self) -> Path:
        return self.root / "cache"

    @property
    def gateway_ledger(self) -> Path:
        return self.root / "gateway_ledger.jsonl"

    # --- qagen / curate ---
    @property
    def raw_records(self) -> Path:
        return self.root / "generated" / "raw.jsonl"

    @property
    def curated_records(self) -> Path:
        return self.root / "curated" / "records.jsonl"

    @property
    def drops_log(self) -> Path:
        return self.root / "curated" / "drops.jsonl"

    @property
    def stage_stats(self) -> Path:
        return self.root / "curated" / "stage_stats.json"

    @property
    def verdicts_log(self) -> Path:
        return self.root / "review" / "verdicts.jsonl"

    @property
    def diagnostics_log(self) -> Path:
        return self.root / "diagnostics.jsonl"

    # --- dedup / dataset ---
    @property
    def dedup_report(self) -> Path:
        return self.root / "dedup" / "report.jsonl"

    @property
    def dataset_dir(self) -> Path:
        return self.root / "dataset"

    @property
    def manifest_path(self) -> Path:
        return self.dataset_dir / "manifest.json"

    def relative(self, path: str | Path) -> str:
        """Workspace-relative POSIX path; the form stored in emitted records."""
        return Path(path).resolve().relative_to(self.root.resolve()).as_posix()

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def diagnostic(self, stage: str, message: str, **context: Any) -> None:
        """Append a machine-readable diagnostic; never raises."""
        entry = {"stage": stage, "message": message}
        entry.update(context)
        append_jsonl(self.diagnostics_log, entry)
