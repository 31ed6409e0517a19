"""Cleaning stages and the human-review store.

Three principles drive curation: quality (validity, figure legitimacy, LLM
judge scoring), professionalism (solver verification of multiple-choice
records, derivation constraint in prompts), and diversity (keyword filtering
of imported external datasets). Every stage accounts for each input record as
kept, dropped (with an enumerable reason), or routed to human review; backend
failures always fail open to review, never to silent acceptance.
"""

from __future__ import annotations

import re
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol

from PIL import Image, ImageStat

from .gateway import ChatRequest, Gateway, Message, TextPart
from .grounding import FigureIndex
from .parsing import (
    explicit_answer_letters,
    extract_json_object,
    standalone_letters,
)
from .qagen import PromptTemplate, StageConfig, classify_reasoning, load_template
from .records import (
    FLAG_NEEDS_REVIEW,
    FLAG_NEEDS_TRACE,
    FLAG_RESPONSE_ERROR,
    FigureRecord,
    JudgeScore,
    PageRecord,
    QaRecord,
    RecordError,
    ReviewVerdict,
)
from .workspace import Workspace, append_jsonl, read_jsonl, write_jsonl_atomic, write_text_atomic
import json


# --- outcomes and accounting ---


@dataclass
class Drop:
    record_id: str
    stage: str
    reason: str

    def to_dict(self) -> dict:
        return {"record_id": self.record_id, "stage": self.stage, "reason": self.reason}


@dataclass
class StageReport:
    stage: str
    input: int = 0
    kept: int = 0
    dropped: int = 0
    review: int = 0
    reasons: Counter = field(default_factory=Counter)

    def check(self) -> None:
        if self.input != self.kept + self.dropped + self.review:
            raise AssertionError(
                f"stage {self.stage}: {self.input} != "
                f"{self.kept} + {self.dropped} + {self.review}"
            )

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "input": self.input,
            "kept": self.kept,
            "dropped": self.dropped,
            "review": self.review,
            "reasons": dict(sorted(self.reasons.items())),
        }


# --- quality: validity ---


def validity_filter(record: QaRecord, figure_index: FigureIndex) -> Optional[str]:
    """None to keep, else the drop reason."""
    if FLAG_RESPONSE_ERROR in record.flags:
        return "api_error"
    try:
        record.validate()
    except RecordError as exc:
        if "empty" in str(exc):
            return "empty field"
        return f"invalid record: {exc}"
    for fid in record.image_refs:
        if fid not in figure_index:
            return "missing image"
    return None


# --- quality: figure legitimacy ---


class ClassifierBackend(Protocol):
    name: str

    def classify(self, figure: FigureRecord, image_path: Path) -> bool: ...


class MockClassifier:
    """Scripted verdicts per figure_id; can raise to simulate backend failure."""

    name = "mock_classifier"

    def __init__(self, script: dict[str, bool] | None = None, default: bool = True,
                 fail_ids: set[str] | None = None):
        self.script = script or {}
        self.default = default
        self.fail_ids = fail_ids or set()

    def classify(self, figure: FigureRecord, image_path: Path) -> bool:
        if figure.figure_id in self.fail_ids:
            raise RuntimeError("scripted classifier failure")
        return self.script.get(figure.figure_id, self.default)


class StatsClassifier:
    """Cheap pixel-statistics heuristic: near-uniform or sliver crops are not
    real figures. A stand-in until a trained classifier is plugged in."""

    name = "stats_classifier"

    def __init__(self, min_side: int = 32, min_stddev: float = 4.0):
        self.min_side = min_side
        self.min_stddev = min_stddev

    def classify(self, figure: FigureRecord, image_path: Path) -> bool:
        with Image.open(image_path) as img:
            if min(img.size) < self.min_side:
                return False
            stat = ImageStat.Stat(img.convert("L"))
            return stat.stddev[0] >= self.min_stddev


def check_legitimacy(
    figure: FigureRecord,
    backend: ClassifierBackend,
    ws: Workspace,
) -> str:
    """Classify one figure; returns the resulting legitimacy state.

    Backend failure leaves the figure unchecked (records referencing it are
    routed to review by the stage driver)."""
    try:
        ok = backend.classify(figure, ws.resolve(figure.image_ref))
    except Exception as exc:
        ws.diagnostic(
            "curate", "legitimacy backend failure", figure_id=figure.figure_id,
            error=str(exc)[:200],
        )
        figure.legitimacy = "unchecked"
        return figure.legitimacy
    figure.legitimacy = "legitimate" if ok else "illegitimate"
    return figure.legitimacy


# --- quality: LLM judge ---


@dataclass
class JudgeOutcome:
    score: Optional[JudgeScore]  # None when unparseable -> route to review
    drop_reason: Optional[str] = None


def build_judge_request(
    record: QaRecord,
    page: Optional[PageRecord],
    template: PromptTemplate,
    config: StageConfig,
    ws: Workspace,
    figure_index: FigureIndex,
) -> ChatRequest:
    record_json = json.dumps(
        {
            "question": record.question,
            "thinking_trace": record.thinking_trace,
            "answer": record.answer,
        },
        ensure_ascii=False,
    )
    if record.modality == "image_text":
        image_note = (
            'Also score "image_text_match": 1-5, how well the question and answer '
            "match the attached figure (5 = perfect match)."
        )
        image_schema = ', "image_text_match": <1-5>'
    else:
        image_note = ""
        image_schema = ""
    system, user = template.render(
        page_text=(page.text if page else ""),
        record_json=record_json,
        image_note=image_note,
        image_schema=image_schema,
    )
    parts = []
    if record.modality == "image_text":
        from .gateway import ImagePart

        fig = figure_index.get(record.image_refs[0])
        if fig is not None:
            parts.append(ImagePart(path=str(ws.resolve(fig.image_ref))))
    parts.append(TextPart(text=user))
    messages = []
    if system:
        messages.append(Message(role="system", parts=[TextPart(text=system)]))
    messages.append(Message(role="user", parts=parts))
    return ChatRequest(
        provider_id=config.provider_id,
        model_id=config.model_id,
        messages=messages,
        sampling=config.sampling(),
    )


def judge_score(
    record: QaRecord,
    page: Optional[PageRecord],
    gateway: Gateway,
    template: PromptTemplate,
    config: StageConfig,
    ws: Workspace,
    figure_index: FigureIndex,
    threshold: int = 4,
) -> JudgeOutcome:
    """Score one record; drops below-threshold records, routes unparseable
    judge output to review."""
    request = build_judge_request(record, page, template, config, ws, figure_index)
    response = gateway.complete(request)
    if not response.ok:
        return JudgeOutcome(score=None)
    obj = extract_json_object(response.text)
    if obj is None:
        return JudgeOutcome(score=None)
    try:
        groundedness = int(obj["groundedness"])
        image_match = obj.get("image_text_match")
        image_match = int(image_match) if image_match is not None else None
        if record.modality != "image_text":
            image_match = None
        score = JudgeScore(
            groundedness=groundedness,
            image_text_match=image_match,
            judge_model_id=config.model_id,
            rationale=str(obj.get("rationale", "")),
        )
        score.validate(record.modality)
    except (KeyError, TypeError, ValueError, RecordError):
        return JudgeOutcome(score=None)
    if score.groundedness < threshold:
        return JudgeOutcome(score=score, drop_reason="low groundedness")
    if score.image_text_match is not None and score.image_text_match < threshold:
        return JudgeOutcome(score=score, drop_reason="low image-text match")
    return JudgeOutcome(score=score)


# --- professionalism: solver verification of MCQs ---


_ANSWER_LINE_RE = re.compile(
    r"^\s*(?:answer|答案)\s*[:：]?\s*\(?[A-Za-z]\)?\.?\s*$", re.IGNORECASE
)


def extract_solver_letter(reply: str, letters: list[str]) -> Optional[str]:
    """Strict extraction for verification: an explicit answer declaration wins;
    otherwise a single unambiguous standalone letter; anything else is None."""
    explicit = explicit_answer_letters(reply, letters)
    if explicit:
        return explicit[-1]
    seen = standalone_letters(reply, letters)
    distinct = sorted(set(seen))
    if len(distinct) == 1:
        return distinct[0]
    return None


def solver_explanation(reply: str) -> str:
    """The solver reply minus a trailing bare answer line; this becomes the
    record's thinking trace."""
    lines = reply.rstrip().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if lines and _ANSWER_LINE_RE.match(lines[-1]):
        lines.pop()
    return "\n".join(lines).strip() or reply.strip()


@dataclass
class McqVerification:
    retained: bool
    reason: str = ""
    solver_letter: Optional[str] = None


def verify_mcq(
    record: QaRecord,
    gateway: Gateway,
    template: PromptTemplate,
    config: StageConfig,
) -> McqVerification:
    """Have the solver answer the question; retain the record (and adopt the
    solver's explanation as its trace) only when the letters agree. Never
    mutates question or options."""
    if record.kind != "mcq" or not record.gold_letter:
        return McqVerification(retained=True, reason="not applicable")
    options_block = "\n".join(
        f"{o['letter']}. {o['text']}" for o in (record.options or [])
    )
    system, user = template.render(question=record.question, options_block=options_block)
    messages = []
    if system:
        messages.append(Message(role="system", parts=[TextPart(text=system)]))
    messages.append(Message(role="user", parts=[TextPart(text=user)]))
    response = gateway.complete(
        ChatRequest(
            provider_id=config.provider_id,
            model_id=config.model_id,
            messages=messages,
            sampling=config.sampling(),
        )
    )
    if not response.ok:
        return McqVerification(retained=False, reason="solver error")
    letter = extract_solver_letter(response.text, record.option_letters)
    if letter is None:
        return McqVerification(retained=False, reason="ambiguous extraction")
    if letter != record.gold_letter:
        return McqVerification(
            retained=False, reason="answer mismatch", solver_letter=letter
        )
    record.thinking_trace = solver_explanation(response.text)
    record.flags = [f for f in record.flags if f != FLAG_NEEDS_TRACE]
    return McqVerification(retained=True, solver_letter=letter)


# --- diversity: keyword filter ---

_CJK_RE = re.compile(r"[㐀-䶿一-鿿豈-﫿]")


def keyword_filter(record: QaRecord, keywords: set[str]) -> bool:
    """Keep iff any keyword occurs in question or answer. CJK keywords match
    as substrings; Latin keywords at word boundaries. Case-insensitive."""
    if not keywords:
        raise ValueError("keyword set must be non-empty")
    haystack = f"{record.question}\n{record.answer}".casefold()
    for kw in keywords:
        needle = kw.casefold()
        if _CJK_RE.search(kw):
            if needle in haystack:
                return True
        else:
            if re.search(rf"\b{re.escape(needle)}\b", haystack):
                return True
    return False


# --- the curation driver ---


@dataclass
class CurateOptions:
    judge_enabled: bool = True
    judge_threshold: int = 4
    judge_config: Optional[StageConfig] = None
    solver_config: Optional[StageConfig] = None
    classifier: Optional[ClassifierBackend] = None
    keywords: Optional[set[str]] = None
    # review: required -> survivors wait for human verdicts; auto -> survivors
    # are accepted immediately (flagged records still wait); off -> like auto.
    review: str = "auto"
    verify_bank_mcq: bool = True
    judge_template: Optional[PromptTemplate] = None
    solver_template: Optional[PromptTemplate] = None
    # grounding labels treated as non-figures (e.g. caption/text regions)
    label_denylist: set[str] = field(default_factory=set)


def run_curation(
    ws: Workspace,
    gateway: Optional[Gateway],
    options: CurateOptions,
    *,
    records: Optional[list[QaRecord]] = None,
    figure_index: Optional[FigureIndex] = None,
    pages: Optional[dict[tuple[str, int], PageRecord]] = None,
) -> tuple[list[QaRecord], list[StageReport]]:
    """Run all cleaning stages over raw records, with per-stage accounting.

    Writes curated records, the drop ledger, and stage stats to the workspace.
    Returns the surviving records (any status) and stage reports.
    """
    if records is None:
        records = [QaRecord.from_dict(d) for d in read_jsonl(ws.raw_records)]
    figure_index = figure_index or FigureIndex(ws)
    if pages is None:
        pages = {}
        if ws.pages_index.exists():
            for d in read_jsonl(ws.pages_index):
                rec = PageRecord.from_dict(d)
                pages[(rec.doc_id, rec.page_index)] = rec

    reports: list[StageReport] = []
    drops: list[Drop] = []
    in_review: list[QaRecord] = []

    def route_review(rec: QaRecord) -> None:
        if FLAG_NEEDS_REVIEW not in rec.flags:
            rec.flags.append(FLAG_NEEDS_REVIEW)
        in_review.append(rec)

    # validity
    stage = StageReport("validity", input=len(records))
    survivors: list[QaRecord] = []
    for rec in records:
        reason = validity_filter(rec, figure_index)
        if reason is None:
            survivors.append(rec)
            stage.kept += 1
        else:
            drops.append(Drop(rec.record_id, "validity", reason))
            stage.reasons[reason] += 1
            stage.dropped += 1
            rec.status = "rejected"
    stage.check()
    reports.append(stage)

    # diversity keyword filter over imported external datasets
    if options.keywords:
        stage = StageReport("keyword", input=len(survivors))
        kept = []
        for rec in survivors:
            if rec.provenance.get("source_kind") == "public_dataset" and not keyword_filter(
                rec, options.keywords
            ):
                drops.append(Drop(rec.record_id, "keyword", "no domain keyword"))
                stage.reasons["no domain keyword"] += 1
                stage.dropped += 1
                rec.status = "rejected"
            else:
                kept.append(rec)
                stage.kept += 1
        survivors = kept
        stage.check()
        reports.append(stage)

    # figure legitimacy with cascade
    if options.classifier is not None or options.label_denylist:
        stage = StageReport("legitimacy", input=len(survivors))
        needed = sorted(
            {fid for rec in survivors for fid in rec.image_refs}
        )
        denylist = {label.casefold() for label in options.label_denylist}
        states: dict[str, str] = {}
        for fid in needed:
            fig = figure_index.get(fid)
            if fig is None:
                continue
            if fig.bbox.label.casefold() in denylist:
                fig.legitimacy = "illegitimate"
                states[fid] = "illegitimate"
                continue
            if options.classifier is not None:
                states[fid] = check_legitimacy(fig, options.classifier, ws)
        figure_index.save()
        kept = []
        for rec in survivors:
            rec_states = [states.get(fid, "legitimate") for fid in rec.image_refs]
            if "illegitimate" in rec_states:
                drops.append(Drop(rec.record_id, "legitimacy", "illegitimate image"))
                stage.reasons["illegitimate image"] += 1
                stage.dropped += 1
                rec.status = "rejected"
            elif "unchecked" in rec_states and rec.image_refs:
                route_review(rec)
                stage.review += 1
            else:
                kept.append(rec)
                stage.kept += 1
        survivors = kept
        stage.check()
        reports.append(stage)

    # LLM judge
    if options.judge_enabled and gateway is not None:
        judge_template = options.judge_template or load_template("judge")
        config = options.judge_config
        if config is None:
            raise ValueError("judge enabled but no judge_config given")
        stage = StageReport("judge", input=len(survivors))
        kept = []
        for rec in survivors:
            doc_id = rec.provenance.get("doc_id")
            page_index = rec.provenance.get("page_index")
            page = pages.get((doc_id, page_index)) if page_index is not None else None
            outcome = judge_score(
                rec, page, gateway, judge_template, config, ws, figure_index,
                threshold=options.judge_threshold,
            )
            if outcome.score is None:
                route_review(rec)
                stage.review += 1
                continue
            rec.quality["groundedness_score"] = outcome.score.groundedness
            if outcome.score.image_text_match is not None:
                rec.quality["image_text_score"] = outcome.score.image_text_match
            if outcome.drop_reason:
                drops.append(Drop(rec.record_id, "judge", outcome.drop_reason))
                stage.reasons[outcome.drop_reason] += 1
                stage.dropped += 1
                rec.status = "rejected"
            else:
                kept.append(rec)
                stage.kept += 1
        survivors = kept
        stage.check()
        reports.append(stage)

    # reasoning rule
    stage = StageReport("reasoning", input=len(survivors))
    for rec in survivors:
        classify_reasoning(rec)
        stage.kept += 1
    stage.check()
    reports.append(stage)

    # solver verification of question-bank MCQs
    if options.verify_bank_mcq and gateway is not None:
        solver_template = options.solver_template or load_template("solver")
        config = options.solver_config
        if config is None:
            raise ValueError("mcq verification enabled but no solver_config given")
        stage = StageReport("mcq_verify", input=len(survivors))
        kept = []
        for rec in survivors:
            applicable = (
                rec.kind == "mcq"
                and rec.gold_letter
                and rec.provenance.get("source_kind") == "question_bank"
            )
            if not applicable:
                kept.append(rec)
                stage.kept += 1
                continue
            result = verify_mcq(rec, gateway, solver_template, config)
            if result.retained:
                kept.append(rec)
                stage.kept += 1
            else:
                drops.append(Drop(rec.record_id, "mcq_verify", result.reason))
                stage.reasons[result.reason] += 1
                stage.dropped += 1
                rec.status = "rejected"
        survivors = kept
        stage.check()
        reports.append(stage)

    # finalize statuses
    for rec in survivors:
        rec.status = "cleaned"
        if options.review in ("auto", "off") and FLAG_NEEDS_REVIEW not in rec.flags \
                and FLAG_NEEDS_TRACE not in rec.flags:
            rec.status = "accepted"
    for rec in in_review:
        rec.status = "cleaned"

    final = survivors + in_review
    store = CurationStore(ws)
    store.replace_all(records)  # every input record persists with its fate
    append_rows = [d.to_dict() for d in drops]
    write_jsonl_atomic(ws.drops_log, append_rows)
    write_text_atomic(
        ws.stage_stats,
        json.dumps([r.to_dict() for r in reports], ensure_ascii=False, indent=2) + "\n",
    )
    return final, reports


# --- review store (backs the review HTTP API) ---


class UnknownRecordError(KeyError):
    pass


class CurationStore:
    """Curated records plus the append-only verdict log.

    Verdicts are replayed on load (latest per record wins), so the log alone
    reconstructs statuses.
    """

    def __init__(self, ws: Workspace):
        self.ws = ws
        self.records: dict[str, QaRecord] = {}
        self._write_lock = threading.Lock()
        if ws.curated_records.exists():
            for d in read_jsonl(ws.curated_records):
                rec = QaRecord.from_dict(d)
                self.records[rec.record_id] = rec
        if ws.verdicts_log.exists():
            verdicts = [ReviewVerdict.from_dict(d) for d in read_jsonl(ws.verdicts_log)]
            latest: dict[str, ReviewVerdict] = {}
            for v in verdicts:  # file order breaks timestamp ties
                prev = latest.get(v.record_id)
                if prev is None or v.timestamp >= prev.timestamp:
                    latest[v.record_id] = v
            for v in latest.values():
                if v.record_id in self.records:
                    self._apply(self.records[v.record_id], v)

    def replace_all(self, records: list[QaRecord]) -> None:
        self.records = {r.record_id: r for r in records}
        self.save()

    def save(self) -> None:
        write_jsonl_atomic(
            self.ws.curated_records,
            (r.to_dict() for _, r in sorted(self.records.items())),
        )

    @staticmethod
    def _apply(rec: QaRecord, verdict: ReviewVerdict) -> None:
        if verdict.verdict == "accept":
            rec.status = "accepted"
        elif verdict.verdict == "reject":
            rec.status = "rejected"
        else:
            for key, value in (verdict.edited_fields or {}).items():
                setattr(rec, key, value)
            rec.status = "edited"
        rec.flags = [
            f for f in rec.flags if f not in (FLAG_NEEDS_REVIEW, FLAG_NEEDS_TRACE)
        ]

    def submit_verdict(self, verdict: ReviewVerdict) -> QaRecord:
        """Validate and apply a verdict; append-only log, latest wins.
        Writes are serialized so concurrent reviewers cannot interleave."""
        with self._write_lock:
            rec = self.records.get(verdict.record_id)
            if rec is None:
                raise UnknownRecordError(verdict.record_id)
            if verdict.verdict == "edit":
                trial = QaRecord.from_dict(rec.to_dict())
                for key, value in (verdict.edited_fields or {}).items():
                    setattr(trial, key, value)
                trial.validate()  # RecordError propagates as a validation failure
            if verdict.timestamp <= 0:
                verdict.timestamp = time.time()
            self._apply(rec, verdict)
            append_jsonl(self.ws.verdicts_log, verdict.to_dict())
            self.save()
            return rec

    def pending(
        self,
        *,
        kind: Optional[str] = None,
        modality: Optional[str] = None,
        min_score: Optional[int] = None,
        max_score: Optional[int] = None,
        cursor: Optional[str] = None,
        limit: int = 20,
    ) -> tuple[list[QaRecord], Optional[str]]:
        """Pending records, filterable by kind/modality and judge-score range
        (a score range only matches records the judge actually scored)."""

        def score_ok(rec: QaRecord) -> bool:
            if min_score is None and max_score is None:
                return True
            score = rec.quality.get("groundedness_score")
            if score is None:
                return False
            return (min_score is None or score >= min_score) and (
                max_score is None or score <= max_score
            )

        rows = [
            r
            for _, r in sorted(self.records.items())
            if r.status == "cleaned"
            and (kind is None or r.kind == kind)
            and (modality is None or r.modality == modality)
            and score_ok(r)
        ]
        if cursor:
            rows = [r for r in rows if r.record_id > cursor]
        batch = rows[:limit]
        next_cursor = batch[-1].record_id if len(rows) > limit else None
        return batch, next_cursor

    def stats(self) -> dict:
        counts = Counter(r.status for r in self.records.values())
        return {
            "total": len(self.records),
            "pending": counts.get("cleaned", 0),
            "accepted": counts.get("accepted", 0),
            "rejected": counts.get("rejected", 0),
            "edited": counts.get("edited", 0),
            "raw": counts.get("raw", 0),
        }
