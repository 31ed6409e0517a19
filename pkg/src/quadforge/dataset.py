"""Split assignment and training-ready JSONL emission.

Six splits: four train (QA/VQA x reasoning/non-reasoning) and two test
(knowledge = text, diagnosis = image+text), both test splits reasoning-only.
Assignment is a pure function of (modality, trace presence, eval-pool
provenance); emission is deterministic, ordered by record_id, with per-split
checksums in the manifest, so unchanged corpora re-emit byte-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .grounding import FigureIndex
from .records import QaRecord
from .workspace import hash_file, json_line, write_jsonl_atomic, write_text_atomic

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
DEFAULT_IMAGE_PLACEHOLDER = "<image>"

TRAIN_SPLITS = ("QA_reasoning", "QA_non_reasoning", "VQA_reasoning", "VQA_non_reasoning")
TEST_SPLITS = ("test_knowledge", "test_diagnosis")
ALL_SPLITS = TRAIN_SPLITS + TEST_SPLITS

# split -> (modality, has_thinking_trace)
SPLIT_MATRIX = {
    "QA_reasoning": ("text", True),
    "QA_non_reasoning": ("text", False),
    "VQA_reasoning": ("image_text", True),
    "VQA_non_reasoning": ("image_text", False),
    "test_knowledge": ("text", True),
    "test_diagnosis": ("image_text", True),
}


class SplitAssignmentError(Exception):
    """Record violates the split matrix; return it to curation."""


class RenderError(Exception):
    pass


def assign_split(record: QaRecord) -> str:
    """Pure split assignment. Raises SplitAssignmentError on matrix violations
    (non-reasoning kinds carrying traces, malformed eval-pool records)."""
    if record.status not in ("accepted", "edited"):
        raise SplitAssignmentError(
            f"{record.record_id}: status {record.status!r} is not assignable"
        )
    has_trace = bool(record.thinking_trace and record.thinking_trace.strip())
    if record.kind == "dialogue" and has_trace:
        raise SplitAssignmentError(
            f"{record.record_id}: non-reasoning dialogue carries a thinking trace"
        )
    if record.provenance.get("eval_pool"):
        if record.kind != "mcq" or not record.gold_letter or not record.options:
            raise SplitAssignmentError(
                f"{record.record_id}: eval-pool records must be multiple-choice"
            )
        if not has_trace:
            raise SplitAssignmentError(
                f"{record.record_id}: test-split record lacks a thinking trace"
            )
        return "test_knowledge" if record.modality == "text" else "test_diagnosis"
    if record.modality == "text":
        return "QA_reasoning" if has_trace else "QA_non_reasoning"
    return "VQA_reasoning" if has_trace else "VQA_non_reasoning"


def question_text(record: QaRecord) -> str:
    """Question as shown to the model: MCQs carry their options block."""
    if record.kind == "mcq" and record.options:
        options = "\n".join(f"{o['letter']}. {o['text']}" for o in record.options)
        return f"{record.question}\n{options}"
    return record.question


def render_training_record(
    record: QaRecord,
    figure_index: Optional[FigureIndex] = None,
    placeholder: str = DEFAULT_IMAGE_PLACEHOLDER,
) -> dict:
    """Conversation object for instruction tuning: user turn with one image
    placeholder per image, assistant turn with the think-tagged trace."""
    images: list[str] = []
    for fid in record.image_refs:
        fig = figure_index.get(fid) if figure_index else None
        images.append(fig.image_ref if fig is not None else fid)
    user_value = "".join(f"{placeholder}\n" for _ in images) + question_text(record)
    if user_value.count(placeholder) != len(images):
        raise RenderError(
            f"{record.record_id}: placeholder count != image count"
        )
    if record.thinking_trace and record.thinking_trace.strip():
        assistant_value = (
            f"{THINK_OPEN}{record.thinking_trace}{THINK_CLOSE}{record.answer}"
        )
    else:
        assistant_value = record.answer
    return {
        "id": record.record_id,
        "images": images,
        "conversations": [
            {"from": "user", "value": user_value},
            {"from": "assistant", "value": assistant_value},
        ],
    }


# --- category histogram ---

DEFAULT_CATEGORY_MAP: list[tuple[str, str]] = [
    ("乳腺", "breast"), ("breast", "breast"),
    ("肝", "liver"), ("liver", "liver"),
    ("甲状腺", "thyroid"), ("thyroid", "thyroid"),
    ("胎儿", "fetal"), ("fetal", "fetal"), ("obstetric", "fetal"),
    ("肾", "kidney"), ("kidney", "kidney"), ("renal", "kidney"),
    ("心", "cardiac"), ("cardiac", "cardiac"), ("heart", "cardiac"),
]


def categorize(record: QaRecord, category_map: list[tuple[str, str]]) -> str:
    if record.provenance.get("category"):
        return str(record.provenance["category"])
    haystack = f"{record.question}\n{record.answer}".casefold()
    for keyword, tag in category_map:
        if keyword.casefold() in haystack:
            return tag
    return "other"


@dataclass
class SplitManifest:
    split_name: str
    count: int
    modality: str
    has_thinking_trace: bool
    category_histogram: dict[str, int]
    checksum: str

    def to_dict(self) -> dict:
        return {
            "split_name": self.split_name,
            "count": self.count,
            "modality": self.modality,
            "has_thinking_trace": self.has_thinking_trace,
            "category_histogram": dict(sorted(self.category_histogram.items())),
            "checksum": self.checksum,
        }


def split_records(
    records: list[QaRecord],
) -> tuple[dict[str, list[QaRecord]], list[tuple[QaRecord, str]]]:
    """Partition assignable records into splits; violations are returned, not
    raised, so one bad record cannot block assembly."""
    splits: dict[str, list[QaRecord]] = {name: [] for name in ALL_SPLITS}
    errors: list[tuple[QaRecord, str]] = []
    for rec in records:
        try:
            splits[assign_split(rec)].append(rec)
        except SplitAssignmentError as exc:
            errors.append((rec, str(exc)))
    return splits, errors


def emit_and_summarize(
    splits: dict[str, list[QaRecord]],
    out_dir: str | Path,
    *,
    figure_index: Optional[FigureIndex] = None,
    category_map: Optional[list[tuple[str, str]]] = None,
    placeholder: str = DEFAULT_IMAGE_PLACEHOLDER,
) -> list[SplitManifest]:
    """Write one JSONL per split (stable record_id order, atomic) plus
    manifest.json; re-emission over unchanged inputs is byte-identical."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    category_map = category_map if category_map is not None else DEFAULT_CATEGORY_MAP
    manifests: list[SplitManifest] = []
    for name in ALL_SPLITS:
        records = sorted(splits.get(name, []), key=lambda r: r.record_id)
        modality, has_trace = SPLIT_MATRIX[name]
        rendered = []
        histogram: dict[str, int] = {}
        for rec in records:
            rec_has_trace = bool(rec.thinking_trace and rec.thinking_trace.strip())
            if rec.modality != modality or rec_has_trace != has_trace:
                raise SplitAssignmentError(
                    f"{rec.record_id}: does not satisfy the {name} matrix row"
                )
            rendered.append(render_training_record(rec, figure_index, placeholder))
            tag = categorize(rec, category_map)
            histogram[tag] = histogram.get(tag, 0) + 1
        path = out_dir / f"{name}.jsonl"
        write_jsonl_atomic(path, rendered)
        manifests.append(
            SplitManifest(
                split_name=name,
                count=len(rendered),
                modality=modality,
                has_thinking_trace=has_trace,
                category_histogram=histogram,
                checksum=hash_file(path),
            )
        )
    manifest_payload = {
        "splits": [m.to_dict() for m in manifests],
        "total": sum(m.count for m in manifests),
    }
    write_text_atomic(
        out_dir / "manifest.json",
        json.dumps(manifest_payload, ensure_ascii=False, indent=2) + "\n",
    )
    return manifests


def parse_emitted_line(line: str) -> dict:
    return json.loads(line)


def reemit_line(obj: dict) -> str:
    """Round-trip helper: parsing an emitted line and re-rendering it must
    yield identical bytes."""
    return json_line(obj)
