"""Multiple-choice evaluation with k-sample pass@1 and think-budget sweeps.

pass@1 for one item is the mean of k binary correctness values from k
independently sampled, budget-forced responses; the aggregate is the plain
mean over items (and therefore equals the item-count-weighted mean of
per-category values). Unanswerable responses score 0. Defaults follow the
evaluation protocol: k=4, temperature 0.6, top-p 0.7.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .budget import BudgetPolicy, ControlledGeneration, generate_with_budget, segment
from .gateway import ChatRequest, Gateway, ImagePart, Message, Sampling, TextPart
from .parsing import explicit_answer_letters, standalone_letters
from .records import QaRecord
from .workspace import append_jsonl, read_jsonl, write_text_atomic

DEFAULT_K = 4
DEFAULT_TEMPERATURE = 0.6
DEFAULT_TOP_P = 0.7

DEFAULT_EVAL_SYSTEM_PROMPT = (
    "Answer the multiple-choice question. Reason step by step inside "
    "<think></think> tags, then state your final choice on its own line as "
    '"Answer: <letter>".'
)


class EvalLoadError(Exception):
    pass


@dataclass
class EvalItem:
    item_id: str
    question: str
    options: dict[str, str]  # ordered letter -> text
    gold_letter: str
    category: str = "other"
    image_refs: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if not self.item_id:
            raise ValueError("missing item_id")
        if len(self.options) < 2:
            raise ValueError("fewer than 2 options")
        if self.gold_letter not in self.options:
            raise ValueError(
                f"gold letter {self.gold_letter!r} not among {list(self.options)}"
            )

    @property
    def letters(self) -> list[str]:
        return list(self.options.keys())

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "question": self.question,
            "options": dict(self.options),
            "gold_letter": self.gold_letter,
            "category": self.category,
            "image_refs": list(self.image_refs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalItem":
        return cls(
            item_id=str(d["item_id"]),
            question=d["question"],
            options={str(k): str(v) for k, v in d["options"].items()},
            gold_letter=str(d["gold_letter"]),
            category=str(d.get("category", "other")),
            image_refs=list(d.get("image_refs", [])),
        )


def load_eval_set(path: str | Path) -> tuple[list[EvalItem], list[str]]:
    """Load and validate an EvalItem JSONL. Invalid lines are rejected with
    their line numbers; zero valid items is a load error."""
    path = Path(path)
    items: list[EvalItem] = []
    rejects: list[str] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                item = EvalItem.from_dict(json.loads(line))
                item.validate()
            except (ValueError, KeyError, TypeError) as exc:
                rejects.append(f"line {lineno}: {exc}")
                continue
            if item.item_id in seen:
                rejects.append(f"line {lineno}: duplicate item_id {item.item_id!r}")
                continue
            seen.add(item.item_id)
            items.append(item)
    if not items:
        raise EvalLoadError(f"{path}: no valid eval items ({len(rejects)} rejected)")
    return items, rejects


def records_to_eval_items(records: list[QaRecord]) -> list[EvalItem]:
    """Project accepted MCQ records into EvalItems (the bridge from assembled
    test splits to the harness). Categories come from provenance when present,
    else the keyword->tag map used for manifest histograms."""
    from .dataset import DEFAULT_CATEGORY_MAP, categorize

    items = []
    for rec in records:
        if rec.kind != "mcq" or not rec.options or not rec.gold_letter:
            continue
        items.append(
            EvalItem(
                item_id=rec.record_id,
                question=rec.question,
                options={o["letter"]: o["text"] for o in rec.options},
                gold_letter=rec.gold_letter,
                category=categorize(rec, DEFAULT_CATEGORY_MAP),
                image_refs=list(rec.image_refs),
            )
        )
    return items


# --- choice extraction ---


def extract_choice(response_text: str, options: dict[str, str]) -> Optional[str]:
    """Deterministic, total choice extraction over the answer segment.

    Precedence: (1) explicit "answer is X" / "Answer: X" / "答案是X" patterns,
    last occurrence wins; (2) last standalone option letter; (3) the unique
    option whose full text appears verbatim; else None.
    """
    letters = list(options.keys())
    _, answer_part, _ = segment(response_text)
    explicit = explicit_answer_letters(answer_part, letters)
    if explicit:
        return explicit[-1]
    standalone = standalone_letters(answer_part, letters)
    if standalone:
        return standalone[-1]
    matches = [
        letter
        for letter, text in options.items()
        if text.strip() and text.strip() in answer_part
    ]
    if len(matches) == 1:
        return matches[0]
    return None


# --- running evaluations ---


@dataclass
class ItemResult:
    item_id: str
    category: str
    gold_letter: str
    letters: list[Optional[str]]
    flags: list[int]  # p_i per sample
    annotations: list[str]

    @property
    def pass_at_1(self) -> float:
        return sum(self.flags) / len(self.flags) if self.flags else 0.0

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "category": self.category,
            "gold_letter": self.gold_letter,
            "letters": self.letters,
            "flags": self.flags,
            "pass_at_1": self.pass_at_1,
            "annotations": self.annotations,
        }


@dataclass
class EvalReport:
    items: list[ItemResult]
    k: int
    sampling: dict
    policy: dict

    @property
    def overall_pass_at_1(self) -> float:
        if not self.items:
            return 0.0
        return sum(i.pass_at_1 for i in self.items) / len(self.items)

    def per_category(self) -> dict[str, dict]:
        groups: dict[str, list[ItemResult]] = {}
        for item in self.items:
            groups.setdefault(item.category, []).append(item)
        return {
            cat: {
                "pass_at_1": sum(i.pass_at_1 for i in rows) / len(rows),
                "items": len(rows),
            }
            for cat, rows in sorted(groups.items())
        }

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "sampling": self.sampling,
            "policy": self.policy,
            "overall_pass_at_1": self.overall_pass_at_1,
            "per_category": self.per_category(),
            "items": [i.to_dict() for i in self.items],
        }


def build_eval_request(
    item: EvalItem,
    provider_id: str,
    model_id: str,
    sampling: Sampling,
    *,
    image_base: Optional[Path] = None,
    system_prompt: str = DEFAULT_EVAL_SYSTEM_PROMPT,
) -> ChatRequest:
    options_block = "\n".join(f"{l}. {t}" for l, t in item.options.items())
    parts: list = []
    for ref in item.image_refs:
        path = Path(ref)
        if not path.is_absolute() and image_base is not None:
            path = image_base / ref
        parts.append(ImagePart(path=str(path)))
    parts.append(TextPart(text=f"{item.question}\n{options_block}"))
    return ChatRequest(
        provider_id=provider_id,
        model_id=model_id,
        messages=[
            Message(role="system", parts=[TextPart(text=system_prompt)]),
            Message(role="user", parts=parts),
        ],
        sampling=sampling,
    )


def run_eval(
    items: list[EvalItem],
    gateway: Gateway,
    *,
    provider_id: str,
    model_id: str,
    k: int = DEFAULT_K,
    sampling: Optional[Sampling] = None,
    policy: Optional[BudgetPolicy] = None,
    image_base: Optional[Path] = None,
    system_prompt: str = DEFAULT_EVAL_SYSTEM_PROMPT,
    transcripts_path: Optional[Path] = None,
    base_seed: int = 0,
) -> EvalReport:
    """k budget-forced samples per item; a gateway failure on a sample scores
    that p_i = 0 with an annotation and the run continues."""
    if k < 1:
        raise ValueError("k must be >= 1")
    sampling = sampling or Sampling(
        temperature=DEFAULT_TEMPERATURE, top_p=DEFAULT_TOP_P, max_tokens=4096
    )
    policy = policy or BudgetPolicy.identity()
    results: list[ItemResult] = []
    for item in items:
        letters: list[Optional[str]] = []
        flags: list[int] = []
        annotations: list[str] = []
        for sample_index in range(k):
            per_sample = Sampling(
                temperature=sampling.temperature,
                top_p=sampling.top_p,
                max_tokens=sampling.max_tokens,
                seed=base_seed + sample_index,
            )
            request = build_eval_request(
                item, provider_id, model_id, per_sample,
                image_base=image_base, system_prompt=system_prompt,
            )
            generation: Optional[ControlledGeneration] = None
            try:
                generation = generate_with_budget(request, policy, gateway)
            except Exception as exc:  # precondition errors etc.
                letters.append(None)
                flags.append(0)
                annotations.append(f"sample {sample_index}: {exc}")
            else:
                if not generation.ok:
                    letters.append(None)
                    flags.append(0)
                    annotations.append(f"sample {sample_index}: gateway error")
                else:
                    letter = extract_choice(generation.final_text, item.options)
                    letters.append(letter)
                    flags.append(1 if letter == item.gold_letter else 0)
            if transcripts_path is not None:
                append_jsonl(
                    transcripts_path,
                    {
                        "item_id": item.item_id,
                        "sample_index": sample_index,
                        "seed": per_sample.seed,
                        "generation": generation.to_dict() if generation else None,
                    },
                )
        results.append(
            ItemResult(
                item_id=item.item_id,
                category=item.category,
                gold_letter=item.gold_letter,
                letters=letters,
                flags=flags,
                annotations=annotations,
            )
        )
    return EvalReport(
        items=results,
        k=k,
        sampling={
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
            "max_tokens": sampling.max_tokens,
        },
        policy={
            "min_think_units": policy.min_think_units,
            "max_think_units": policy.max_think_units,
            "max_wait_injections": policy.max_wait_injections,
            "unit": policy.unit,
        },
    )


# --- test-time scaling sweeps ---


@dataclass
class CurvePoint:
    budget: int
    pass_at_1: Optional[float]
    per_category: dict[str, float]
    failed: bool = False

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "pass_at_1": self.pass_at_1,
            "per_category": dict(sorted(self.per_category.items())),
            "failed": self.failed,
        }


def scaling_sweep(
    items: list[EvalItem],
    budgets: list[BudgetPolicy],
    gateway: Gateway,
    **run_kwargs,
) -> list[CurvePoint]:
    """One full evaluation per budget; per-budget failures isolate into marked
    curve points. Budgets are keyed by max_think_units and must strictly
    increase."""
    values = [p.max_think_units for p in budgets]
    if any(v is None for v in values):
        raise ValueError("sweep budgets must have finite max_think_units")
    if any(nxt <= prev for prev, nxt in zip(values, values[1:])):
        raise ValueError(f"budgets must be strictly increasing, got {values}")
    curve: list[CurvePoint] = []
    for policy in budgets:
        try:
            report = run_eval(items, gateway, policy=policy, **run_kwargs)
            curve.append(
                CurvePoint(
                    budget=policy.max_think_units,
                    pass_at_1=report.overall_pass_at_1,
                    per_category={
                        cat: row["pass_at_1"] for cat, row in report.per_category().items()
                    },
                )
            )
        except Exception:
            curve.append(
                CurvePoint(
                    budget=policy.max_think_units,
                    pass_at_1=None,
                    per_category={},
                    failed=True,
                )
            )
    return curve


def write_curve_csv(curve: list[CurvePoint], path: str | Path) -> None:
    categories = sorted({cat for point in curve for cat in point.per_category})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["budget", "pass_at_1", *categories, "failed"])
        for point in curve:
            writer.writerow(
                [
                    point.budget,
                    "" if point.pass_at_1 is None else f"{point.pass_at_1:.6f}",
                    *[
                        f"{point.per_category[c]:.6f}" if c in point.per_category else ""
                        for c in categories
                    ],
                    int(point.failed),
                ]
            )


def write_report(report: EvalReport, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    write_text_atomic(path, json.dumps(report.to_dict(), ensure_ascii=False, indent=2) + "\n")
    return path


def load_eval_items_file(path: str | Path) -> list[EvalItem]:
    return [EvalItem.from_dict(d) for d in read_jsonl(path)]
