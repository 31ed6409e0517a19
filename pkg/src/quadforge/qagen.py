"""Generation-prompt construction and model-output parsing into QaRecords.

Templates are editable JSON files with {{placeholders}}; the kind of record a
template produces (mcq / dialogue / diagnostic) is declared by the template,
never inferred from output text. Dialogue records are non-reasoning (their
traces are stripped); mcq and diagnostic records are reasoning and must carry
traces.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

from .gateway import ChatRequest, ChatResponse, Gateway, ImagePart, Message, Sampling, TextPart
from .records import (
    FLAG_NEEDS_TRACE,
    FLAG_RESPONSE_ERROR,
    FigureRecord,
    PageRecord,
    QaRecord,
    RecordError,
    REASONING_KINDS,
    SourceDocument,
    make_record,
)
from .parsing import extract_json_array, first_string
from .workspace import Workspace, append_jsonl, read_jsonl


class PromptError(Exception):
    pass


class ChunkBelowMinimum(PromptError):
    pass


class ConversionError(Exception):
    """A question-bank row cannot be mapped to a QaRecord."""


DEFAULT_CITATION_CONSTRAINT = (
    "Every question and answer must be derived entirely from the material "
    "provided above; do not introduce outside facts."
)

DEFAULT_SCHEMA_NOTE = (
    "Respond with only a JSON array, one object per item. Object fields: "
    '"question", "think" (reasoning steps; omit for plain dialogue), "answer". '
    'Multiple-choice objects additionally carry "options" (list of choice texts) '
    'and "gold" (the correct option letter).'
)


@dataclass
class PromptTemplate:
    template_id: str
    kind: str  # record kind this template yields
    modality: str  # text | image_text
    system: str
    user: str
    output_schema_note: str = DEFAULT_SCHEMA_NOTE
    citation_constraint: str = DEFAULT_CITATION_CONSTRAINT

    def render(self, **values: str) -> tuple[str, str]:
        """Fill {{placeholders}}; the rendered user message must carry the
        citation constraint verbatim."""
        values = dict(values)
        values.setdefault("schema_note", self.output_schema_note)
        values.setdefault("citation_constraint", self.citation_constraint)
        system, user = self.system, self.user
        for key, val in values.items():
            system = system.replace("{{" + key + "}}", str(val))
            user = user.replace("{{" + key + "}}", str(val))
        leftovers = re.findall(r"\{\{(\w+)\}\}", user + system)
        if leftovers:
            raise PromptError(
                f"template {self.template_id}: unfilled placeholders {sorted(set(leftovers))}"
            )
        if self.citation_constraint and self.citation_constraint not in user:
            raise PromptError(
                f"template {self.template_id}: rendered prompt lost the citation constraint"
            )
        return system, user


def load_template(name_or_path: str | Path) -> PromptTemplate:
    """Load a template from a file path, or from the bundled prompts/ set."""
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        data = json.loads(path.read_text(encoding="utf-8"))
    else:
        ref = resources.files("quadforge.prompts").joinpath(f"{name_or_path}.json")
        data = json.loads(ref.read_text(encoding="utf-8"))
    return PromptTemplate(
        template_id=data["template_id"],
        kind=data["kind"],
        modality=data.get("modality", "text"),
        system=data.get("system", ""),
        user=data["user"],
        output_schema_note=data.get("output_schema_note", DEFAULT_SCHEMA_NOTE),
        citation_constraint=data.get("citation_constraint", DEFAULT_CITATION_CONSTRAINT),
    )


@dataclass
class StageConfig:
    """Knobs for one generation stage (which provider/model, how to sample)."""

    provider_id: str
    model_id: str
    temperature: float = 0.7
    top_p: float = 0.95
    max_tokens: int = 4096
    triplets_per_chunk: int = 3
    min_chunk_chars: int = 200
    max_chunk_chars: int = 6000
    chunk_overlap: int = 200

    def sampling(self) -> Sampling:
        return Sampling(
            temperature=self.temperature, top_p=self.top_p, max_tokens=self.max_tokens
        )


# --- chunking ---


def chunk_page_text(
    text: str,
    min_chars: int = 200,
    max_chars: int = 6000,
    overlap: int = 200,
) -> tuple[list[str], list[str]]:
    """Split page text at paragraph boundaries into <= max_chars chunks with
    overlap carried from the previous chunk. Returns (chunks, skipped)."""
    paragraphs = [p.strip() for p in re.split(r"\n+", text) if p.strip()]
    chunks: list[str] = []
    current = ""
    for para in paragraphs:
        while len(para) > max_chars:  # oversized paragraph: hard split
            if current:
                chunks.append(current)
                current = ""
            chunks.append(para[:max_chars])
            para = para[max(0, max_chars - overlap):]
        candidate = f"{current}\n{para}" if current else para
        if len(candidate) > max_chars:
            chunks.append(current)
            tail = current[-overlap:] if overlap else ""
            current = f"{tail}\n{para}" if tail else para
        else:
            current = candidate
    if current:
        chunks.append(current)
    kept = [c for c in chunks if len(c) >= min_chars]
    skipped = [c for c in chunks if len(c) < min_chars]
    return kept, skipped


# --- prompt builders ---


def build_text_prompt(
    chunk: str,
    template: PromptTemplate,
    config: StageConfig,
) -> ChatRequest:
    if len(chunk) < config.min_chunk_chars:
        raise ChunkBelowMinimum(
            f"chunk below minimum ({len(chunk)} < {config.min_chunk_chars} chars)"
        )
    if len(chunk) > config.max_chunk_chars:
        raise PromptError(f"chunk exceeds maximum ({len(chunk)} chars)")
    system, user = template.render(chunk=chunk, count=config.triplets_per_chunk)
    messages = []
    if system:
        messages.append(Message(role="system", parts=[TextPart(text=system)]))
    messages.append(Message(role="user", parts=[TextPart(text=user)]))
    return ChatRequest(
        provider_id=config.provider_id,
        model_id=config.model_id,
        messages=messages,
        sampling=config.sampling(),
    )


def serialize_boxes(figures: list[FigureRecord]) -> str:
    return json.dumps(
        [f.bbox.to_dict() for f in figures], ensure_ascii=False, separators=(", ", ": ")
    )


def build_grounded_prompt(
    page: PageRecord,
    figures: list[FigureRecord],
    template: PromptTemplate,
    config: StageConfig,
    ws: Workspace,
) -> ChatRequest:
    if not figures:
        raise PromptError("no boxes on page; nothing to ask")
    system, user = template.render(
        boxes_json=serialize_boxes(figures), count=len(figures)
    )
    messages = []
    if system:
        messages.append(Message(role="system", parts=[TextPart(text=system)]))
    messages.append(
        Message(
            role="user",
            parts=[ImagePart(path=str(ws.resolve(page.image_ref))), TextPart(text=user)],
        )
    )
    return ChatRequest(
        provider_id=config.provider_id,
        model_id=config.model_id,
        messages=messages,
        sampling=config.sampling(),
    )


# --- output parsing ---


def _parse_options(obj: dict) -> tuple[Optional[list[dict]], Optional[str]]:
    raw = obj.get("options")
    options: Optional[list[dict]] = None
    if isinstance(raw, dict):
        options = [{"letter": k.strip().upper(), "text": str(v)} for k, v in raw.items()]
    elif isinstance(raw, list) and raw:
        if all(isinstance(o, dict) for o in raw):
            options = [
                {"letter": str(o.get("letter", "")).strip().upper(), "text": str(o.get("text", ""))}
                for o in raw
            ]
        else:
            options = [
                {"letter": chr(ord("A") + i), "text": str(o)} for i, o in enumerate(raw)
            ]
    gold = first_string(obj, "gold", "gold_letter", "correct", "answer_letter")
    if gold:
        gold = gold.strip().upper()[:1]
    return options, gold


def parse_generation(
    response: ChatResponse,
    expected_count: int,
    *,
    kind: str,
    provenance: dict,
    bind_figures: Optional[list[FigureRecord]] = None,
) -> tuple[list[QaRecord], list[str]]:
    """Parse a generation reply into QaRecords.

    Never raises: malformed objects are dropped with a diagnostic, count
    mismatches are flagged but salvaged, and a completely unparseable reply
    yields an empty list.
    """
    diagnostics: list[str] = []
    if response.finish_reason == "error":
        return [], ["response error; nothing parsed"]
    flags = [FLAG_RESPONSE_ERROR] if response.finish_reason == "length" else []
    items = extract_json_array(response.text)
    if items is None:
        obj_fallback = None
        if expected_count == 1:
            from .parsing import extract_json_object

            obj_fallback = extract_json_object(response.text)
        if obj_fallback is not None:
            items = [obj_fallback]
        else:
            return [], ["no parseable objects in generation output"]

    records: list[QaRecord] = []
    for pos, obj in enumerate(items):
        if not isinstance(obj, dict):
            diagnostics.append(f"item {pos}: not an object, dropped")
            continue
        question = first_string(obj, "question", "q")
        answer = first_string(obj, "answer", "a", "response")
        if not question or not answer:
            diagnostics.append(f"item {pos}: missing question or answer, dropped")
            continue
        think = first_string(obj, "think", "thinking", "thinking_trace", "reasoning")
        options, gold = _parse_options(obj)

        modality = "text"
        image_refs: list[str] = []
        item_prov = dict(provenance)
        if bind_figures is not None:
            if pos >= len(bind_figures):
                diagnostics.append(f"item {pos}: no matching box, dropped")
                continue
            fig = bind_figures[pos]
            modality = "image_text"
            image_refs = [fig.figure_id]
            item_prov["bbox"] = "{},{},{},{}".format(
                fig.bbox.x_min, fig.bbox.y_min, fig.bbox.x_max, fig.bbox.y_max
            )
        try:
            rec = make_record(
                modality=modality,
                kind=kind,
                question=question,
                answer=answer,
                thinking_trace=think,
                options=options,
                gold_letter=gold,
                image_refs=image_refs,
                provenance=item_prov,
                flags=flags,
            )
        except RecordError as exc:
            diagnostics.append(f"item {pos}: {exc}, dropped")
            continue
        records.append(rec)
    if len(items) != expected_count:
        diagnostics.append(
            f"count mismatch: expected {expected_count}, got {len(items)}"
        )
    return records, diagnostics


def classify_reasoning(record: QaRecord) -> QaRecord:
    """Apply the reasoning rule: dialogues never carry traces; mcq and
    diagnostic records must. Idempotent."""
    if record.kind == "dialogue":
        record.thinking_trace = None
        record.flags = [f for f in record.flags if f != FLAG_NEEDS_TRACE]
    elif record.kind in REASONING_KINDS:
        if record.thinking_trace:
            record.flags = [f for f in record.flags if f != FLAG_NEEDS_TRACE]
        elif FLAG_NEEDS_TRACE not in record.flags:
            record.flags.append(FLAG_NEEDS_TRACE)
    return record


# --- formatted question banks ---


@dataclass
class BankSchema:
    """Column->field mapping for a formatted question bank."""

    question: str
    options: list[str]
    gold: str
    category: Optional[str] = None

    @classmethod
    def from_dict(cls, d: dict) -> "BankSchema":
        return cls(
            question=d["question"],
            options=list(d["options"]),
            gold=d["gold"],
            category=d.get("category"),
        )


def convert_formatted_bank(row: dict, schema: BankSchema, provenance: dict) -> QaRecord:
    question = str(row.get(schema.question, "") or "").strip()
    if not question:
        raise ConversionError("missing question column")
    option_texts = []
    for col in schema.options:
        value = str(row.get(col, "") or "").strip()
        if value:
            option_texts.append(value)
    if len(option_texts) < 2:
        raise ConversionError("fewer than 2 options")
    letters = [chr(ord("A") + i) for i in range(len(option_texts))]
    gold = str(row.get(schema.gold, "") or "").strip().upper()
    if not gold:
        raise ConversionError("missing gold answer column")
    if gold not in letters:
        raise ConversionError(f"gold letter {gold!r} outside options {letters}")
    options = [{"letter": l, "text": t} for l, t in zip(letters, option_texts)]
    answer_text = next(o["text"] for o in options if o["letter"] == gold)
    prov = dict(provenance)
    prov["source_kind"] = "question_bank"
    if schema.category and row.get(schema.category):
        prov["category"] = str(row[schema.category])
    return make_record(
        modality="text",
        kind="mcq",
        question=question,
        answer=f"{gold}. {answer_text}",
        options=options,
        gold_letter=gold,
        provenance=prov,
    )


def read_bank_rows(path: str | Path) -> Iterable[dict]:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, "r", encoding="utf-8", newline="") as f:
            yield from csv.DictReader(f)
    else:
        yield from read_jsonl(path)


# --- drivers ---


@dataclass
class GenerationRun:
    records: list[QaRecord] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)
    requests: int = 0


class RawRecordWriter:
    """Appends raw records, collapsing duplicate record_ids."""

    def __init__(self, ws: Workspace):
        self.ws = ws
        self.seen: set[str] = set()
        if ws.raw_records.exists():
            for d in read_jsonl(ws.raw_records):
                self.seen.add(d["record_id"])

    def add(self, record: QaRecord) -> bool:
        if record.record_id in self.seen:
            self.ws.diagnostic(
                "qagen", "duplicate record_id collapsed", record_id=record.record_id
            )
            return False
        self.seen.add(record.record_id)
        append_jsonl(self.ws.raw_records, record.to_dict())
        return True


def generate_from_text(
    ws: Workspace,
    gateway: Gateway,
    doc: SourceDocument,
    pages: list[PageRecord],
    templates: list[PromptTemplate],
    config: StageConfig,
    writer: RawRecordWriter,
) -> GenerationRun:
    run = GenerationRun()
    for page in pages:
        chunks, skipped = chunk_page_text(
            page.text, config.min_chunk_chars, config.max_chunk_chars, config.chunk_overlap
        )
        for s in skipped:
            ws.diagnostic(
                "qagen", "chunk below minimum", doc_id=doc.doc_id,
                page_index=page.page_index, chars=len(s),
            )
        for chunk in chunks:
            for template in templates:
                request = build_text_prompt(chunk, template, config)
                response = gateway.complete(request)
                run.requests += 1
                provenance = {
                    "doc_id": doc.doc_id,
                    "page_index": page.page_index,
                    "source_kind": doc.kind,
                    "eval_pool": doc.eval_pool,
                }
                records, diags = parse_generation(
                    response,
                    config.triplets_per_chunk,
                    kind=template.kind,
                    provenance=provenance,
                )
                for d in diags:
                    ws.diagnostic(
                        "qagen", d, doc_id=doc.doc_id, page_index=page.page_index,
                        template=template.template_id,
                    )
                for rec in records:
                    classify_reasoning(rec)
                    if writer.add(rec):
                        run.records.append(rec)
                run.diagnostics.extend(diags)
    return run


def generate_from_figures(
    ws: Workspace,
    gateway: Gateway,
    doc: SourceDocument,
    pages: list[PageRecord],
    figures_by_page: dict[int, list[FigureRecord]],
    templates: list[PromptTemplate],
    config: StageConfig,
    writer: RawRecordWriter,
) -> GenerationRun:
    run = GenerationRun()
    for page in pages:
        figures = figures_by_page.get(page.page_index, [])
        if not figures:
            continue
        for template in templates:
            request = build_grounded_prompt(page, figures, template, config, ws)
            response = gateway.complete(request)
            run.requests += 1
            provenance = {
                "doc_id": doc.doc_id,
                "page_index": page.page_index,
                "source_kind": doc.kind,
                "eval_pool": doc.eval_pool,
            }
            records, diags = parse_generation(
                response,
                len(figures),
                kind=template.kind,
                provenance=provenance,
                bind_figures=figures,
            )
            for d in diags:
                ws.diagnostic(
                    "qagen", d, doc_id=doc.doc_id, page_index=page.page_index,
                    template=template.template_id,
                )
            for rec in records:
                classify_reasoning(rec)
                if writer.add(rec):
                    run.records.append(rec)
            run.diagnostics.extend(diags)
    return run


def convert_bank(
    ws: Workspace,
    doc: SourceDocument,
    schema: BankSchema,
    writer: RawRecordWriter,
) -> GenerationRun:
    run = GenerationRun()
    provenance = {
        "doc_id": doc.doc_id,
        "page_index": None,
        "source_kind": doc.kind,
        "eval_pool": doc.eval_pool,
    }
    for i, row in enumerate(read_bank_rows(doc.path)):
        try:
            rec = convert_formatted_bank(row, schema, provenance)
        except ConversionError as exc:
            msg = f"row {i}: {exc}"
            ws.diagnostic("qagen", msg, doc_id=doc.doc_id)
            run.diagnostics.append(msg)
            continue
        classify_reasoning(rec)
        if writer.add(rec):
            run.records.append(rec)
    return run
