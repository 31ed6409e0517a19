"""Think-segment budget forcing around any chat endpoint.

The controller watches the <think></think> segment a primed model emits. A
think segment closed below the minimum budget gets its close tag stripped and
a "Wait, " marker appended, and the model is re-invoked to keep reasoning (up
to a capped number of injections). A think segment that reaches the maximum
budget is truncated at the cap, closed, and the model is re-invoked for the
answer. The emitted text therefore always carries exactly one balanced think
pair (or a documented no-think flag when the model never opened one).

Budget units: a deterministic estimator counts each CJK character and each
whitespace-separated run as one unit, and always decides truncation cut
points. With unit="model_tokens", provider-reported completion token counts
measure think-phase increments when present (estimator otherwise); a
truncated think counts exactly max units.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from .gateway import ChatRequest, ChatResponse, Gateway, Message, TextPart

UNIT_KINDS = ("model_tokens", "estimated_tokens")

_CJK = r"㐀-䶿一-鿿豈-﫿"
_UNIT_RE = re.compile(rf"[{_CJK}]|[^\s{_CJK}]+")


def estimate_units(text: str) -> int:
    """Whitespace/CJK token estimate: each CJK char and each non-space run
    counts one."""
    return sum(1 for _ in _UNIT_RE.finditer(text))


def truncate_to_units(text: str, max_units: int) -> str:
    """Cut text so the estimator sees exactly min(units, max_units) tokens;
    cuts land on token boundaries."""
    if max_units <= 0:
        return ""
    count = 0
    end = 0
    for m in _UNIT_RE.finditer(text):
        count += 1
        end = m.end()
        if count >= max_units:
            break
    if count < max_units:
        return text
    return text[:end]


@dataclass
class BudgetPolicy:
    min_think_units: int = 0
    max_think_units: Optional[int] = None  # None = unbounded
    max_wait_injections: int = 2
    wait_marker: str = "Wait, "
    open_tag: str = "<think>"
    close_tag: str = "</think>"
    unit: str = "estimated_tokens"

    def __post_init__(self):
        if self.min_think_units < 0:
            raise ValueError("min_think_units must be >= 0")
        if self.max_think_units is not None:
            if self.max_think_units < 1 or self.max_think_units < self.min_think_units:
                raise ValueError("max_think_units must be >= max(1, min_think_units)")
        if self.max_wait_injections < 0:
            raise ValueError("max_wait_injections must be >= 0")
        if not self.wait_marker:
            raise ValueError("wait_marker must be non-empty")
        if not self.open_tag or not self.close_tag or self.open_tag == self.close_tag:
            raise ValueError("think tags must be non-empty and distinct")
        if self.unit not in UNIT_KINDS:
            raise ValueError(f"unit must be one of {UNIT_KINDS}")

    @classmethod
    def identity(cls) -> "BudgetPolicy":
        """Pass-through policy: no minimum, no cap, no injections."""
        return cls(min_think_units=0, max_think_units=None, max_wait_injections=0)


@dataclass
class ControlledGeneration:
    final_text: str
    think_text: str
    answer_text: str
    injections_used: int
    truncated: bool
    unit_counts: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    transcript: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return "gateway_error" not in self.flags

    def to_dict(self) -> dict:
        return {
            "final_text": self.final_text,
            "think_text": self.think_text,
            "answer_text": self.answer_text,
            "injections_used": self.injections_used,
            "truncated": self.truncated,
            "unit_counts": dict(self.unit_counts),
            "flags": list(self.flags),
        }


def segment(text: str, policy: Optional[BudgetPolicy] = None) -> tuple[str, str, list[str]]:
    """Split on the first balanced think pair: (think, answer, flags).
    Absent or unclosed tags leave think empty with a malformed flag."""
    policy = policy or BudgetPolicy.identity()
    open_at = text.find(policy.open_tag)
    if open_at == -1:
        return "", text, ["no_think_segment"]
    close_at = text.find(policy.close_tag, open_at + len(policy.open_tag))
    if close_at == -1:
        return "", text, ["malformed_think_tags"]
    think = text[open_at + len(policy.open_tag) : close_at]
    answer = text[:open_at] + text[close_at + len(policy.close_tag) :]
    return think, answer, []


def _scrub(text: str, policy: BudgetPolicy) -> str:
    return text.replace(policy.open_tag, "").replace(policy.close_tag, "")


def _continuation(request: ChatRequest, prefix: str) -> ChatRequest:
    """Resubmit with the accumulated generation as an assistant-prefix turn."""
    return ChatRequest(
        provider_id=request.provider_id,
        model_id=request.model_id,
        messages=list(request.messages) + [
            Message(role="assistant", parts=[TextPart(text=prefix)])
        ],
        sampling=request.sampling,
    )


class _ThinkBudget:
    """Accumulated think content plus unit accounting in the policy's metric."""

    def __init__(self, policy: BudgetPolicy):
        self.policy = policy
        self.text = ""
        self.units = 0

    def add(self, portion: str, response: Optional[ChatResponse]) -> None:
        self.text += portion
        if (
            self.policy.unit == "model_tokens"
            and response is not None
            and response.completion_tokens is not None
        ):
            self.units += response.completion_tokens
        else:
            self.units += estimate_units(portion)

    def over_max(self) -> bool:
        return (
            self.policy.max_think_units is not None
            and self.units >= self.policy.max_think_units
        )

    def under_min(self) -> bool:
        return self.units < self.policy.min_think_units

    def truncate(self) -> None:
        assert self.policy.max_think_units is not None
        self.text = truncate_to_units(self.text, self.policy.max_think_units)
        self.units = min(self.units, self.policy.max_think_units)


def generate_with_budget(
    request: ChatRequest,
    policy: BudgetPolicy,
    gateway: Gateway,
) -> ControlledGeneration:
    """Run the budget-forcing state machine around one primed generation.

    Deterministic given a scripted gateway. Gateway errors yield an error
    result carrying the partial transcript instead of raising.
    """
    transcript: list[str] = []
    flags: list[str] = []
    injections = 0
    truncated = False
    budget = _ThinkBudget(policy)
    # injections plus a fixed allowance for length-continuations and the
    # answer round; adversarial models cannot spin the controller forever
    max_rounds = policy.max_wait_injections + 8

    def fail(flag: str) -> ControlledGeneration:
        flags.append(flag)
        return ControlledGeneration(
            final_text="",
            think_text=_scrub(budget.text, policy),
            answer_text="",
            injections_used=injections,
            truncated=truncated,
            unit_counts={"think": budget.units, "answer": 0},
            flags=flags,
            transcript=transcript,
        )

    response = gateway.complete(request)
    transcript.append(response.text)
    if not response.ok:
        return fail("gateway_error")

    open_at = response.text.find(policy.open_tag)
    if open_at == -1:
        # model never opened a think segment: pass raw output through
        flags.append("no_think_segment")
        return ControlledGeneration(
            final_text=response.text,
            think_text="",
            answer_text=response.text,
            injections_used=0,
            truncated=False,
            unit_counts={"think": 0, "answer": estimate_units(response.text)},
            flags=flags,
            transcript=transcript,
        )
    if response.text[:open_at].strip():
        flags.append("pre_think_text_dropped")

    pending = response.text[open_at + len(policy.open_tag) :]
    pending_response: Optional[ChatResponse] = response
    answer: Optional[str] = None
    rounds = 0

    while True:
        rounds += 1
        close_at = pending.find(policy.close_tag)
        if close_at != -1:
            portion = _scrub(pending[:close_at], policy)
            budget.add(portion, pending_response)
            if budget.over_max():
                budget.truncate()
                truncated = True
                break  # discard the model's own close and answer; re-ask
            if budget.under_min() and injections < policy.max_wait_injections:
                # strip the close tag, append the wait marker, keep thinking
                budget.add(policy.wait_marker, None)
                injections += 1
                if rounds >= max_rounds:
                    flags.append("round_limit")
                    break
                cont = _continuation(request, policy.open_tag + budget.text)
                response = gateway.complete(cont)
                transcript.append(response.text)
                if not response.ok:
                    return fail("gateway_error")
                pending = response.text
                pending_response = response
                continue
            answer = pending[close_at + len(policy.close_tag) :]
            break

        portion = _scrub(pending, policy)
        budget.add(portion, pending_response)
        if budget.over_max():
            budget.truncate()
            truncated = True
            break
        if rounds >= max_rounds:
            flags.append("round_limit")
            break
        if pending_response is not None and pending_response.finish_reason == "length":
            # ran out of tokens mid-think: plain continuation, no marker
            cont = _continuation(request, policy.open_tag + budget.text)
            response = gateway.complete(cont)
            transcript.append(response.text)
            if not response.ok:
                return fail("gateway_error")
            pending = response.text
            pending_response = response
            continue
        # finish_reason=stop without a close tag: treat as an implicit close
        if budget.under_min() and injections < policy.max_wait_injections:
            budget.add(policy.wait_marker, None)
            injections += 1
            cont = _continuation(request, policy.open_tag + budget.text)
            response = gateway.complete(cont)
            transcript.append(response.text)
            if not response.ok:
                return fail("gateway_error")
            pending = response.text
            pending_response = response
            continue
        flags.append("implicit_close")
        break

    think_text = _scrub(budget.text, policy)
    if answer is None or not answer.strip():
        prefix = policy.open_tag + think_text + policy.close_tag
        response = gateway.complete(_continuation(request, prefix))
        transcript.append(response.text)
        if not response.ok:
            return fail("gateway_error")
        answer = response.text
    answer_text = _scrub(answer, policy)

    final_text = policy.open_tag + think_text + policy.close_tag + answer_text
    return ControlledGeneration(
        final_text=final_text,
        think_text=think_text,
        answer_text=answer_text,
        injections_used=injections,
        truncated=truncated,
        unit_counts={
            "think": budget.units if not truncated else (policy.max_think_units or budget.units),
            "answer": estimate_units(answer_text),
        },
        flags=flags,
        transcript=transcript,
    )
