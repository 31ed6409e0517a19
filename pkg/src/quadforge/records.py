"""Domain record types shared across pipeline stages.

Dataclasses with explicit dict round-trips: field order in the emitted JSON is
part of the artifact contract (byte-stable re-emission), so ``to_dict`` builds
dicts by hand instead of relying on ``asdict``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from .workspace import stable_id

SOURCE_KINDS = ("book", "guideline", "paper", "question_bank", "public_dataset")
RASTER_KINDS = ("book", "guideline", "paper")
FORMATTED_KINDS = ("question_bank", "public_dataset")

MODALITIES = ("text", "image_text")
RECORD_KINDS = ("mcq", "dialogue", "diagnostic")
REASONING_KINDS = ("mcq", "diagnostic")
STATUSES = ("raw", "cleaned", "accepted", "rejected", "edited")

FLAG_RESPONSE_ERROR = "response_error"
FLAG_NEEDS_TRACE = "needs_trace"
FLAG_NEEDS_REVIEW = "needs_review"
FLAG_SPLIT_ERROR = "split_error"
FLAG_UNDEDUPLICATED = "undeduplicated"


class RecordError(ValueError):
    """A record violates its invariants."""


@dataclass
class SourceDocument:
    doc_id: str
    path: str
    kind: str
    language_hint: str = "und"
    license_note: str = ""
    eval_pool: bool = False

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise RecordError(f"unsupported source kind: {self.kind!r}")

    @property
    def requires_rasterization(self) -> bool:
        return self.kind in RASTER_KINDS

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "path": self.path,
            "kind": self.kind,
            "language_hint": self.language_hint,
            "license_note": self.license_note,
            "eval_pool": self.eval_pool,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SourceDocument":
        return cls(
            doc_id=d["doc_id"],
            path=d["path"],
            kind=d["kind"],
            language_hint=d.get("language_hint", "und"),
            license_note=d.get("license_note", ""),
            eval_pool=bool(d.get("eval_pool", False)),
        )


@dataclass
class PageRecord:
    doc_id: str
    page_index: int
    width_px: int
    height_px: int
    image_ref: str
    text: str = ""
    text_backend: str = ""
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise RecordError(
                f"page {self.doc_id}/{self.page_index}: non-positive dimensions"
            )
        if self.page_index < 0:
            raise RecordError("page_index must be >= 0")

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "page_index": self.page_index,
            "width_px": self.width_px,
            "height_px": self.height_px,
            "image_ref": self.image_ref,
            "text": self.text,
            "text_backend": self.text_backend,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PageRecord":
        return cls(
            doc_id=d["doc_id"],
            page_index=d["page_index"],
            width_px=d["width_px"],
            height_px=d["height_px"],
            image_ref=d["image_ref"],
            text=d.get("text", ""),
            text_backend=d.get("text_backend", ""),
            flags=list(d.get("flags", [])),
        )


@dataclass
class BoundingBox:
    x_min: int
    y_min: int
    x_max: int
    y_max: int
    label: str = ""
    caption: str = ""

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return self.width * self.height

    def to_dict(self) -> dict:
        return {
            "bbox_2d": [self.x_min, self.y_min, self.x_max, self.y_max],
            "label": self.label,
            "caption": self.caption,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingBox":
        coords = d.get("bbox_2d", d.get("bbox"))
        if not coords or len(coords) != 4:
            raise RecordError(f"bounding box needs 4 coordinates, got {coords!r}")
        return cls(
            x_min=int(coords[0]),
            y_min=int(coords[1]),
            x_max=int(coords[2]),
            y_max=int(coords[3]),
            label=str(d.get("label", "")),
            caption=str(d.get("caption", "")),
        )


LEGITIMACY_STATES = ("unchecked", "legitimate", "illegitimate")


@dataclass
class FigureRecord:
    figure_id: str
    doc_id: str
    page_index: int
    bbox: BoundingBox
    image_ref: str
    legitimacy: str = "unchecked"

    def __post_init__(self):
        if self.legitimacy not in LEGITIMACY_STATES:
            raise RecordError(f"bad legitimacy state: {self.legitimacy!r}")

    def to_dict(self) -> dict:
        return {
            "figure_id": self.figure_id,
            "doc_id": self.doc_id,
            "page_index": self.page_index,
            "bbox": self.bbox.to_dict(),
            "image_ref": self.image_ref,
            "legitimacy": self.legitimacy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FigureRecord":
        return cls(
            figure_id=d["figure_id"],
            doc_id=d["doc_id"],
            page_index=d["page_index"],
            bbox=BoundingBox.from_dict(d["bbox"]),
            image_ref=d["image_ref"],
            legitimacy=d.get("legitimacy", "unchecked"),
        )


def figure_identifier(doc_id: str, page_index: int, bbox: BoundingBox) -> str:
    return stable_id(doc_id, page_index, bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max)


_WS = re.compile(r"\s+")


def _norm(text: Optional[str]) -> str:
    return _WS.sub(" ", (text or "").strip())


@dataclass
class QaRecord:
    """One generated QA triplet / quadruplet and its lifecycle state."""

    record_id: str
    modality: str
    kind: str
    question: str
    answer: str
    thinking_trace: Optional[str] = None
    options: Optional[list[dict]] = None  # [{"letter": "A", "text": ...}, ...]
    gold_letter: Optional[str] = None
    image_refs: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    quality: dict = field(default_factory=dict)
    status: str = "raw"
    flags: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if self.modality not in MODALITIES:
            raise RecordError(f"bad modality {self.modality!r}")
        if self.kind not in RECORD_KINDS:
            raise RecordError(f"bad kind {self.kind!r}")
        if self.status not in STATUSES:
            raise RecordError(f"bad status {self.status!r}")
        if not _norm(self.question):
            raise RecordError("empty question")
        if not _norm(self.answer):
            raise RecordError("empty answer")
        if self.modality == "image_text" and not self.image_refs:
            raise RecordError("image_text record without image_refs")
        if self.modality == "text" and self.image_refs:
            raise RecordError("text record carrying image_refs")
        if self.kind == "mcq":
            if not self.options:
                raise RecordError("mcq record without options")
            letters = [o["letter"] for o in self.options]
            if len(set(letters)) != len(letters):
                raise RecordError("duplicate option letters")
            if self.gold_letter not in letters:
                raise RecordError(
                    f"gold letter {self.gold_letter!r} not among options {letters}"
                )

    @property
    def option_letters(self) -> list[str]:
        return [o["letter"] for o in self.options] if self.options else []

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "modality": self.modality,
            "kind": self.kind,
            "question": self.question,
            "thinking_trace": self.thinking_trace,
            "answer": self.answer,
            "options": self.options,
            "gold_letter": self.gold_letter,
            "image_refs": list(self.image_refs),
            "provenance": dict(self.provenance),
            "quality": dict(self.quality),
            "status": self.status,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QaRecord":
        return cls(
            record_id=d["record_id"],
            modality=d["modality"],
            kind=d["kind"],
            question=d["question"],
            answer=d["answer"],
            thinking_trace=d.get("thinking_trace"),
            options=d.get("options"),
            gold_letter=d.get("gold_letter"),
            image_refs=list(d.get("image_refs", [])),
            provenance=dict(d.get("provenance", {})),
            quality=dict(d.get("quality", {})),
            status=d.get("status", "raw"),
            flags=list(d.get("flags", [])),
        )


def make_record(
    modality: str,
    kind: str,
    question: str,
    answer: str,
    *,
    thinking_trace: Optional[str] = None,
    options: Optional[list[dict]] = None,
    gold_letter: Optional[str] = None,
    image_refs: Optional[list[str]] = None,
    provenance: Optional[dict] = None,
    flags: Optional[list[str]] = None,
) -> QaRecord:
    """Build a QaRecord with its content-derived identifier, then validate it."""
    provenance = dict(provenance or {})
    image_refs = list(image_refs or [])
    option_sig = ""
    if options:
        option_sig = "|".join(f"{o['letter']}={_norm(o['text'])}" for o in options)
    record_id = stable_id(
        modality,
        kind,
        _norm(question),
        _norm(answer),
        _norm(thinking_trace),
        option_sig,
        gold_letter or "",
        ",".join(image_refs),
        provenance.get("doc_id", ""),
        provenance.get("page_index", ""),
        provenance.get("bbox", ""),
        provenance.get("source_kind", ""),
    )
    rec = QaRecord(
        record_id=record_id,
        modality=modality,
        kind=kind,
        question=question,
        answer=answer,
        thinking_trace=thinking_trace,
        options=options,
        gold_letter=gold_letter,
        image_refs=image_refs,
        provenance=provenance,
        flags=list(flags or []),
    )
    rec.validate()
    return rec


@dataclass
class JudgeScore:
    groundedness: int
    image_text_match: Optional[int]
    judge_model_id: str
    rationale: str = ""

    def validate(self, modality: str) -> None:
        if not 1 <= self.groundedness <= 5:
            raise RecordError(f"groundedness {self.groundedness} outside [1,5]")
        if modality == "image_text":
            if self.image_text_match is None:
                raise RecordError("image record judged without image_text_match")
            if not 1 <= self.image_text_match <= 5:
                raise RecordError(
                    f"image_text_match {self.image_text_match} outside [1,5]"
                )
        elif self.image_text_match is not None:
            raise RecordError("text record must not carry image_text_match")

    def to_dict(self) -> dict:
        return {
            "groundedness": self.groundedness,
            "image_text_match": self.image_text_match,
            "judge_model_id": self.judge_model_id,
            "rationale": self.rationale,
        }


VERDICTS = ("accept", "reject", "edit")
EDITABLE_FIELDS = ("question", "thinking_trace", "answer", "gold_letter")


@dataclass
class ReviewVerdict:
    record_id: str
    verdict: str
    reviewer_id: str
    timestamp: float
    edited_fields: Optional[dict] = None

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise RecordError(f"unknown verdict {self.verdict!r}")
        if self.verdict == "edit":
            if not self.edited_fields:
                raise RecordError("edit verdict with empty edited_fields")
            bad = set(self.edited_fields) - set(EDITABLE_FIELDS)
            if bad:
                raise RecordError(f"non-editable fields: {sorted(bad)}")

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "verdict": self.verdict,
            "reviewer_id": self.reviewer_id,
            "timestamp": self.timestamp,
            "edited_fields": self.edited_fields,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewVerdict":
        return cls(
            record_id=d["record_id"],
            verdict=d["verdict"],
            reviewer_id=d.get("reviewer_id", ""),
            timestamp=float(d.get("timestamp", 0.0)),
            edited_fields=d.get("edited_fields"),
        )
