from __future__ import annotations

import pytest

from quadforge.gateway import ChatResponse
from quadforge.workspace import Workspace


@pytest.fixture
def ws(tmp_path) -> Workspace:
    return Workspace(tmp_path / "ws").ensure()


class ScriptedGateway:
    """Stands in for Gateway in controller tests: returns scripted responses
    in order. Entries are strings (finish stop) or ChatResponse objects."""

    def __init__(self, entries):
        self.entries = list(entries)
        self.requests = []

    def complete(self, request, retry_policy=None) -> ChatResponse:
        self.requests.append(request)
        if not self.entries:
            return ChatResponse(text="", finish_reason="error", attempt_count=1)
        entry = self.entries.pop(0)
        if isinstance(entry, str):
            return ChatResponse(text=entry)
        return entry


class RuleGateway:
    """Gateway stand-in driven by a function of the request."""

    def __init__(self, fn):
        self.fn = fn
        self.requests = []

    def complete(self, request, retry_policy=None) -> ChatResponse:
        self.requests.append(request)
        result = self.fn(request)
        if isinstance(result, str):
            return ChatResponse(text=result)
        return result


@pytest.fixture
def scripted_gateway():
    return ScriptedGateway


@pytest.fixture
def rule_gateway():
    return RuleGateway
