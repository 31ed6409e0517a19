"""Tolerant extraction of structured content from model text.

Models wrap JSON in markdown fences, prepend prose, and drift from the
requested schema; everything here degrades to "no result" instead of raising
deep inside a corpus run.
"""

from __future__ import annotations

import json
import re
from typing import Optional

_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def _candidates(text: str) -> list[str]:
    cands = [m.group(1) for m in _FENCE_RE.finditer(text)]
    cands.append(text)
    return cands


def extract_json_array(text: str) -> Optional[list]:
    """First JSON array found in the text, fences stripped; None when absent."""
    decoder = json.JSONDecoder()
    for candidate in _candidates(text):
        idx = candidate.find("[")
        while idx != -1:
            try:
                value, _ = decoder.raw_decode(candidate, idx)
            except json.JSONDecodeError:
                idx = candidate.find("[", idx + 1)
                continue
            if isinstance(value, list):
                return value
            idx = candidate.find("[", idx + 1)
    return None


def extract_json_object(text: str) -> Optional[dict]:
    """First JSON object found in the text; None when absent."""
    decoder = json.JSONDecoder()
    for candidate in _candidates(text):
        idx = candidate.find("{")
        while idx != -1:
            try:
                value, _ = decoder.raw_decode(candidate, idx)
            except json.JSONDecodeError:
                idx = candidate.find("{", idx + 1)
                continue
            if isinstance(value, dict):
                return value
            idx = candidate.find("{", idx + 1)
    return None


def first_string(obj: dict, *keys: str) -> Optional[str]:
    """First present key whose value stringifies non-empty."""
    for key in keys:
        if key in obj and obj[key] is not None:
            value = obj[key]
            if isinstance(value, (int, float)):
                value = str(value)
            if isinstance(value, str) and value.strip():
                return value
    return None


# --- choice-letter extraction ---

# Explicit answer declarations, highest-precedence signal. The letter is a
# single token right after the phrase.
_EXPLICIT_PATTERNS = [
    re.compile(r"answer\s+is\s*[:：]?\s*\(?([A-Za-z])\)?(?![A-Za-z])", re.IGNORECASE),
    re.compile(r"answer\s*[:：]\s*\(?([A-Za-z])\)?(?![A-Za-z])", re.IGNORECASE),
    re.compile(r"答案是\s*[:：]?\s*\(?([A-Za-z])\)?"),
    re.compile(r"答案\s*[:：]\s*\(?([A-Za-z])\)?"),
    re.compile(r"选\s*择?\s*\(?([A-Za-z])\)?(?![A-Za-z])"),
]


def explicit_answer_letters(text: str, letters: list[str]) -> list[str]:
    """All explicitly declared answer letters, in order of appearance."""
    upper = {l.upper(): l for l in letters}
    found: list[tuple[int, str]] = []
    for pat in _EXPLICIT_PATTERNS:
        for m in pat.finditer(text):
            letter = m.group(1).upper()
            if letter in upper:
                found.append((m.start(), upper[letter]))
    found.sort()
    return [l for _, l in found]


def standalone_letters(text: str, letters: list[str]) -> list[str]:
    """Option letters appearing as standalone tokens, in order of appearance."""
    upper = {l.upper(): l for l in letters}
    pattern = re.compile(
        r"(?<![A-Za-z0-9])([" + "".join(re.escape(l.upper()) for l in letters) + r"])(?![A-Za-z0-9])",
        re.IGNORECASE,
    )
    return [upper[m.group(1).upper()] for m in pattern.finditer(text)]
