from __future__ import annotations

import csv
import json

import pytest

from quadforge.budget import BudgetPolicy, estimate_units
from quadforge.evalharness import (
    DEFAULT_K,
    DEFAULT_TEMPERATURE,
    DEFAULT_TOP_P,
    EvalItem,
    EvalLoadError,
    extract_choice,
    load_eval_set,
    records_to_eval_items,
    run_eval,
    scaling_sweep,
    write_curve_csv,
)
from quadforge.gateway import ChatResponse
from quadforge.records import make_record

OPTIONS = {"A": "alpha", "B": "beta", "C": "gamma", "D": "delta"}


def _item(i=0, gold="C", category="liver") -> EvalItem:
    return EvalItem(
        item_id=f"item{i}", question=f"Question {i}?", options=dict(OPTIONS),
        gold_letter=gold, category=category,
    )


def _write_set(tmp_path, items):
    path = tmp_path / "set.jsonl"
    with open(path, "w", encoding="utf-8") as f:
        for item in items:
            f.write(json.dumps(item) + "\n")
    return path


# --- loading ---


def test_load_valid_set(tmp_path):
    path = _write_set(tmp_path, [_item(i).to_dict() for i in range(371)])
    items, rejects = load_eval_set(path)
    assert len(items) == 371
    assert rejects == []


def test_load_rejects_gold_outside_options_with_line_number(tmp_path):
    bad = _item(0).to_dict()
    bad["gold_letter"] = "E"
    path = _write_set(tmp_path, [bad, _item(1).to_dict()])
    items, rejects = load_eval_set(path)
    assert len(items) == 1
    assert rejects and rejects[0].startswith("line 1:")


def test_load_rejects_duplicate_item_id(tmp_path):
    path = _write_set(tmp_path, [_item(0).to_dict(), _item(0).to_dict()])
    items, rejects = load_eval_set(path)
    assert len(items) == 1
    assert "duplicate" in rejects[0]


def test_load_zero_valid_items_is_error(tmp_path):
    bad = _item(0).to_dict()
    del bad["gold_letter"]
    path = _write_set(tmp_path, [bad])
    with pytest.raises(EvalLoadError):
        load_eval_set(path)


def test_records_to_eval_items():
    rec = make_record(
        "text", "mcq", "Which?", "B. beta", thinking_trace="T",
        options=[{"letter": l, "text": t} for l, t in OPTIONS.items()],
        gold_letter="B",
        provenance={"doc_id": "d", "category": "breast"},
    )
    items = records_to_eval_items([rec])
    assert len(items) == 1
    assert items[0].gold_letter == "B"
    assert items[0].category == "breast"


# --- choice extraction ---


def test_explicit_answer_pattern():
    assert extract_choice("...</think>The answer is C.", OPTIONS) == "C"
    assert extract_choice("...</think>Answer: B", OPTIONS) == "B"
    assert extract_choice("...</think>答案是D。", OPTIONS) == "D"


def test_no_signal_returns_none():
    assert extract_choice("...</think>Both look plausible to me.", OPTIONS) is None


def test_last_standalone_letter_wins():
    assert extract_choice("...</think>I considered B but conclude D", OPTIONS) == "D"


def test_explicit_beats_standalone():
    text = "...</think>D seems close but the answer is A."
    assert extract_choice(text, OPTIONS) == "A"


def test_option_text_verbatim_match():
    assert extract_choice("...</think>It must be the gamma variant.", OPTIONS) == "C"


def test_option_text_ambiguous_is_none():
    assert extract_choice("...</think>Either alpha or beta.", OPTIONS) is None


def test_extraction_ignores_think_content():
    text = "<think>The answer is B, no wait.</think>The answer is C."
    assert extract_choice(text, OPTIONS) == "C"


def test_extraction_total_on_weird_inputs():
    for text in ["", "   ", "<think>", "]][[", "答案"]:
        extract_choice(text, OPTIONS)  # must not raise


# --- run_eval ---


def _outcome_gateway(rule_gateway, flags_per_item: dict[str, list[int]], gold="C"):
    """Scripted model: per (item, seed) correctness from a flag matrix."""

    def fn(request):
        user = request.messages[-1].text()
        if request.messages[-1].role == "assistant":
            return ChatResponse(text="Answer: A")  # unused answer phase
        item_q = next(l for l in user.splitlines() if l.startswith("Question"))
        item_id = f"item{item_q.split()[1].rstrip('?')}"
        seed = request.sampling.seed or 0
        correct = flags_per_item[item_id][seed]
        letter = gold if correct else ("A" if gold != "A" else "B")
        return ChatResponse(text=f"<think>working</think>Answer: {letter}")

    return rule_gateway(fn)


def test_single_item_flags_1011_gives_075(rule_gateway):
    gw = _outcome_gateway(rule_gateway, {"item0": [1, 0, 1, 1]})
    report = run_eval(
        [_item(0)], gw, provider_id="p", model_id="m", k=4,
        policy=BudgetPolicy.identity(),
    )
    assert report.items[0].flags == [1, 0, 1, 1]
    assert report.items[0].pass_at_1 == pytest.approx(0.75)
    assert report.overall_pass_at_1 == pytest.approx(0.75)


def test_always_gold_model_scores_one(rule_gateway):
    gw = _outcome_gateway(rule_gateway, {f"item{i}": [1, 1, 1, 1] for i in range(5)})
    report = run_eval(
        [_item(i) for i in range(5)], gw, provider_id="p", model_id="m", k=4,
        policy=BudgetPolicy.identity(),
    )
    assert report.overall_pass_at_1 == 1.0


def test_correct_on_2_of_4_gives_half(rule_gateway):
    gw = _outcome_gateway(rule_gateway, {f"item{i}": [1, 1, 0, 0] for i in range(10)})
    report = run_eval(
        [_item(i) for i in range(10)], gw, provider_id="p", model_id="m", k=4,
        policy=BudgetPolicy.identity(),
    )
    assert report.overall_pass_at_1 == pytest.approx(0.5)


def test_gateway_error_scores_zero_and_continues(rule_gateway):
    def fn(request):
        if request.sampling.seed == 1:
            return ChatResponse(text="", finish_reason="error")
        return ChatResponse(text="<think>t</think>Answer: C")

    report = run_eval(
        [_item(0)], rule_gateway(fn), provider_id="p", model_id="m", k=4,
        policy=BudgetPolicy.identity(),
    )
    assert report.items[0].flags == [1, 0, 1, 1]
    assert report.items[0].annotations


def test_defaults_wired(rule_gateway):
    assert DEFAULT_K == 4
    assert DEFAULT_TEMPERATURE == 0.6
    assert DEFAULT_TOP_P == 0.7
    seen = []

    def fn(request):
        seen.append(request.sampling)
        return ChatResponse(text="<think>t</think>Answer: C")

    run_eval([_item(0)], rule_gateway(fn), provider_id="p", model_id="m")
    assert len(seen) == 4  # k defaults to 4
    assert all(s.temperature == 0.6 and s.top_p == 0.7 for s in seen)


def test_category_decomposition_matches_overall(rule_gateway):
    flags = {}
    items = []
    for i in range(9):
        items.append(_item(i, category=["liver", "breast", "thyroid"][i % 3]))
        flags[f"item{i}"] = [(1 if (i + s) % 2 == 0 else 0) for s in range(4)]
    gw = _outcome_gateway(rule_gateway, flags)
    report = run_eval(items, gw, provider_id="p", model_id="m", k=4,
                      policy=BudgetPolicy.identity())
    per_cat = report.per_category()
    weighted = sum(row["pass_at_1"] * row["items"] for row in per_cat.values())
    weighted /= sum(row["items"] for row in per_cat.values())
    assert abs(weighted - report.overall_pass_at_1) < 1e-12


def test_transcripts_persisted(rule_gateway, tmp_path):
    gw = _outcome_gateway(rule_gateway, {"item0": [1, 1, 1, 1]})
    path = tmp_path / "transcripts.jsonl"
    run_eval([_item(0)], gw, provider_id="p", model_id="m", k=4,
             policy=BudgetPolicy.identity(), transcripts_path=path)
    rows = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(rows) == 4
    assert {r["sample_index"] for r in rows} == {0, 1, 2, 3}


def test_identity_policy_k1_is_plain_accuracy(rule_gateway):
    # half the items answered correctly, single sample, no budget forcing
    def fn(request):
        user = request.messages[-1].text()
        qline = next(l for l in user.splitlines() if l.startswith("Question"))
        i = int(qline.split()[1].rstrip("?"))
        letter = "C" if i % 2 == 0 else "A"
        return ChatResponse(text=f"<think>t</think>Answer: {letter}")

    items = [_item(i) for i in range(10)]
    report = run_eval(items, rule_gateway(fn), provider_id="p", model_id="m",
                      k=1, policy=BudgetPolicy.identity())
    assert report.overall_pass_at_1 == pytest.approx(0.5)
    assert all(r.flags in ([0], [1]) for r in report.items)


# --- sweeps ---


def _length_sensitive_gateway(rule_gateway, low=100, high=200, gold="C"):
    """Answers correctly iff the think prefix length lands inside [low, high]."""

    def fn(request):
        last = request.messages[-1]
        if last.role == "assistant":
            think = last.text()
            think = think.removeprefix("<think>")
            think = think.split("</think>")[0]
            length = estimate_units(think)
            letter = gold if low <= length <= high else "A"
            return ChatResponse(text=f"Answer: {letter}")
        long_think = " ".join(f"t{i}" for i in range(400))
        return ChatResponse(text=f"<think>{long_think}", finish_reason="stop")

    return rule_gateway(fn)


def test_sweep_single_budget_equals_run_eval(rule_gateway):
    gw = _length_sensitive_gateway(rule_gateway)
    policy = BudgetPolicy(min_think_units=0, max_think_units=150)
    curve = scaling_sweep([_item(0)], [policy], gw, provider_id="p", model_id="m", k=2)
    assert len(curve) == 1
    report = run_eval([_item(0)], _length_sensitive_gateway(rule_gateway),
                      provider_id="p", model_id="m", k=2, policy=policy)
    assert curve[0].pass_at_1 == report.overall_pass_at_1


def test_sweep_requires_strictly_increasing_budgets(rule_gateway):
    gw = _length_sensitive_gateway(rule_gateway)
    p = lambda b: BudgetPolicy(min_think_units=0, max_think_units=b)
    with pytest.raises(ValueError, match="strictly increasing"):
        scaling_sweep([_item(0)], [p(200), p(100)], gw, provider_id="p", model_id="m")


def test_sweep_reproduces_rise_then_fall(rule_gateway, tmp_path):
    gw = _length_sensitive_gateway(rule_gateway, low=100, high=200)
    budgets = [
        BudgetPolicy(min_think_units=0, max_think_units=b) for b in (50, 150, 400)
    ]
    curve = scaling_sweep([_item(0)], budgets, gw, provider_id="p", model_id="m", k=2)
    values = [point.pass_at_1 for point in curve]
    assert values == [0.0, 1.0, 0.0]
    csv_path = tmp_path / "curve.csv"
    write_curve_csv(curve, csv_path)
    with open(csv_path) as f:
        rows = list(csv.DictReader(f))
    assert [int(r["budget"]) for r in rows] == [50, 150, 400]
    assert [float(r["pass_at_1"]) for r in rows] == [0.0, 1.0, 0.0]
