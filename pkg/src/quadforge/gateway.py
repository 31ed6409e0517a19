"""Provider-agnostic multimodal chat client.

One funnel for every model call the pipeline makes: retries with exponential
backoff, a per-provider token-bucket rate limit, a content-addressed response
cache keyed by request digest (so warm re-runs make zero network calls), and a
usage ledger. Providers are pluggable; the mock provider replays scripted
fixtures so the whole pipeline runs offline.
"""

from __future__ import annotations

import base64
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol

from .workspace import (
    Workspace,
    append_jsonl,
    canonical_json,
    content_hash,
    hash_file,
    read_jsonl,
    write_text_atomic,
)

FINISH_REASONS = ("stop", "length", "error")


class GatewayError(Exception):
    pass


class PreconditionError(GatewayError):
    """Request invalid before any network attempt (e.g. missing image file)."""


class ProviderTransientError(GatewayError):
    """Retryable provider failure (rate limit, 5xx, timeout)."""


class ProviderPayloadError(GatewayError):
    """Provider replied with a payload we cannot interpret."""


# --- request / response types ---


@dataclass
class TextPart:
    text: str

    def digest_fields(self) -> dict:
        return {"type": "text", "text": self.text}


@dataclass
class ImagePart:
    path: str

    def digest_fields(self) -> dict:
        return {"type": "image", "sha256": hash_file(self.path)}


Part = TextPart | ImagePart


@dataclass
class Message:
    role: str  # system | user | assistant
    parts: list[Part]

    def text(self) -> str:
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))


@dataclass
class Sampling:
    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int = 2048
    seed: Optional[int] = None  # distinguishes independent samples; in the digest

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0,2]")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p {self.top_p} outside (0,1]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass
class ChatRequest:
    provider_id: str
    model_id: str
    messages: list[Message]
    sampling: Sampling = field(default_factory=Sampling)

    def digest(self) -> str:
        payload = {
            "provider_id": self.provider_id,
            "model_id": self.model_id,
            "messages": [
                {"role": m.role, "parts": [p.digest_fields() for p in m.parts]}
                for m in self.messages
            ],
            "sampling": {
                "temperature": self.sampling.temperature,
                "top_p": self.sampling.top_p,
                "max_tokens": self.sampling.max_tokens,
                "seed": self.sampling.seed,
            },
        }
        return content_hash(canonical_json(payload).encode("utf-8"))

    def image_paths(self) -> list[str]:
        return [
            p.path for m in self.messages for p in m.parts if isinstance(p, ImagePart)
        ]

    def last_user_text(self) -> str:
        for m in reversed(self.messages):
            if m.role == "user":
                return m.text()
        return ""


@dataclass
class ChatResponse:
    text: str
    finish_reason: str = "stop"
    completion_tokens: Optional[int] = None
    latency_ms: float = 0.0
    attempt_count: int = 1

    @property
    def ok(self) -> bool:
        return self.finish_reason != "error"

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "finish_reason": self.finish_reason,
            "completion_tokens": self.completion_tokens,
            "latency_ms": self.latency_ms,
            "attempt_count": self.attempt_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChatResponse":
        return cls(
            text=d["text"],
            finish_reason=d.get("finish_reason", "stop"),
            completion_tokens=d.get("completion_tokens"),
            latency_ms=float(d.get("latency_ms", 0.0)),
            attempt_count=int(d.get("attempt_count", 1)),
        )


@dataclass
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 1.0
    multiplier: float = 2.0
    jitter: float = 0.2  # +-20%; keep jitter*2 < multiplier so backoff stays monotone

    def delay(self, attempt: int, rand: Callable[[], float]) -> float:
        """Delay before retry following `attempt` (1-based)."""
        raw = self.base_delay * self.multiplier ** (attempt - 1)
        return raw * (1.0 + self.jitter * (2.0 * rand() - 1.0))


# --- providers ---


class Provider(Protocol):
    provider_id: str

    def send(self, request: ChatRequest) -> ChatResponse: ...


class CallableProvider:
    """Wrap a plain function as a provider; the basic unit-test seam."""

    def __init__(self, provider_id: str, fn: Callable[[ChatRequest], ChatResponse]):
        self.provider_id = provider_id
        self.fn = fn

    def send(self, request: ChatRequest) -> ChatResponse:
        return self.fn(request)


class MockProvider:
    """Replays scripted transcripts from a fixture.

    Fixture schema (all sections optional):
      by_digest: {request_digest: text | {text, completion_tokens, finish_reason}}
      rules:     [{contains?, image_suffix?, response, completion_tokens?, finish_reason?}]
                 first matching rule wins; `contains` (string or list of strings,
                 all required) matches the last user text, `image_suffix` matches
                 any image part path.
      sequence:  [entry, ...] consumed in order when nothing above matched
      default:   entry used when everything else missed
      fail_first: N scripted transient failures before any success
    """

    def __init__(self, provider_id: str, fixture: dict | str | Path):
        self.provider_id = provider_id
        if isinstance(fixture, (str, Path)):
            fixture = json.loads(Path(fixture).read_text(encoding="utf-8"))
        self.by_digest = dict(fixture.get("by_digest", {}))
        self.rules = list(fixture.get("rules", []))
        self.sequence = list(fixture.get("sequence", []))
        self.default = fixture.get("default")
        self.fail_remaining = int(fixture.get("fail_first", 0))
        self.calls = 0
        self._lock = threading.Lock()

    @staticmethod
    def _entry_response(entry) -> ChatResponse:
        if isinstance(entry, str):
            return ChatResponse(text=entry)
        return ChatResponse(
            text=entry.get("response", entry.get("text", "")),
            finish_reason=entry.get("finish_reason", "stop"),
            completion_tokens=entry.get("completion_tokens"),
        )

    def send(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
            if self.fail_remaining > 0:
                self.fail_remaining -= 1
                raise ProviderTransientError("scripted 429")
            digest = request.digest()
            if digest in self.by_digest:
                return self._entry_response(self.by_digest[digest])
            user_text = request.last_user_text()
            images = request.image_paths()
            for rule in self.rules:
                contains = rule.get("contains")
                suffix = rule.get("image_suffix")
                if contains is not None:
                    needles = [contains] if isinstance(contains, str) else contains
                    if not all(n in user_text for n in needles):
                        continue
                if suffix is not None and not any(p.endswith(suffix) for p in images):
                    continue
                return self._entry_response(rule)
            if self.sequence:
                return self._entry_response(self.sequence.pop(0))
            if self.default is not None:
                return self._entry_response(self.default)
            raise ProviderPayloadError(
                f"mock fixture has no response for request {digest[:12]}"
            )


_FINISH_MAP = {"stop": "stop", "length": "length", "content_filter": "stop"}


class OpenAIChatProvider:
    """OpenAI-style /chat/completions wire format over httpx."""

    def __init__(
        self,
        provider_id: str,
        base_url: str,
        auth_env: str = "",
        *,
        timeout: float = 60.0,
        transport=None,
    ):
        import httpx

        self.provider_id = provider_id
        self.base_url = base_url.rstrip("/")
        self.auth_env = auth_env
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.auth_env, "") if self.auth_env else ""
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    @staticmethod
    def _encode_part(part: Part) -> dict:
        if isinstance(part, TextPart):
            return {"type": "text", "text": part.text}
        data = base64.b64encode(Path(part.path).read_bytes()).decode("ascii")
        suffix = Path(part.path).suffix.lstrip(".").lower() or "png"
        return {
            "type": "image_url",
            "image_url": {"url": f"data:image/{suffix};base64,{data}"},
        }

    def send(self, request: ChatRequest) -> ChatResponse:
        import httpx

        payload = {
            "model": request.model_id,
            "messages": [
                {"role": m.role, "content": [self._encode_part(p) for p in m.parts]}
                for m in request.messages
            ],
            "temperature": request.sampling.temperature,
            "top_p": request.sampling.top_p,
            "max_tokens": request.sampling.max_tokens,
        }
        if request.sampling.seed is not None:
            payload["seed"] = request.sampling.seed
        try:
            resp = self._client.post(
                f"{self.base_url}/chat/completions",
                headers=self._headers(),
                json=payload,
            )
        except httpx.HTTPError as exc:
            raise ProviderTransientError(f"transport error: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise ProviderTransientError(f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            choice = data["choices"][0]
            content = choice["message"]["content"]
            if isinstance(content, list):  # content-part style replies
                content = "".join(
                    c.get("text", "") for c in content if isinstance(c, dict)
                )
            return ChatResponse(
                text=content or "",
                finish_reason=_FINISH_MAP.get(choice.get("finish_reason"), "stop"),
                completion_tokens=data.get("usage", {}).get("completion_tokens"),
            )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProviderPayloadError(f"malformed payload: {resp.text[:500]}") from exc


# --- rate limiting ---


class TokenBucket:
    """requests/minute token bucket; rpm <= 0 disables limiting."""

    def __init__(self, rpm: float, clock=time.monotonic, sleep=time.sleep):
        self.rpm = rpm
        self.capacity = max(rpm, 1.0)
        self.tokens = self.capacity
        self.clock = clock
        self.sleep = sleep
        self.updated = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.rpm <= 0:
            return
        while True:
            with self._lock:
                now = self.clock()
                self.tokens = min(
                    self.capacity, self.tokens + (now - self.updated) * self.rpm / 60.0
                )
                self.updated = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) * 60.0 / self.rpm
            self.sleep(wait)


# --- the gateway ---


class Gateway:
    def __init__(
        self,
        ws: Workspace,
        *,
        retry_policy: RetryPolicy | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rand: Callable[[], float] | None = None,
    ):
        self.ws = ws
        self.retry_policy = retry_policy or RetryPolicy()
        self.sleep = sleep
        import random as _random

        self.rand = rand or _random.random
        self.providers: dict[str, Provider] = {}
        self.limiters: dict[str, TokenBucket] = {}
        self._cache_locks: dict[str, threading.Lock] = {}
        self._lock = threading.Lock()

    def register(self, provider: Provider, rpm: float = 0.0) -> None:
        self.providers[provider.provider_id] = provider
        self.limiters[provider.provider_id] = TokenBucket(rpm, sleep=self.sleep)

    # cache helpers
    def _cache_path(self, digest: str) -> Path:
        return self.ws.cache_dir / f"{digest}.json"

    def cached(self, digest: str) -> ChatResponse | None:
        path = self._cache_path(digest)
        if not path.exists():
            return None
        return ChatResponse.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def _store(self, digest: str, response: ChatResponse) -> None:
        with self._lock:
            lock = self._cache_locks.setdefault(digest, threading.Lock())
        with lock:
            write_text_atomic(
                self._cache_path(digest), json.dumps(response.to_dict(), ensure_ascii=False)
            )

    def _ledger(self, request: ChatRequest, response: ChatResponse, cache_hit: bool) -> None:
        append_jsonl(
            self.ws.gateway_ledger,
            {
                "provider_id": request.provider_id,
                "model_id": request.model_id,
                "request_digest": request.digest(),
                "cache_hit": cache_hit,
                "attempts": response.attempt_count,
                "finish_reason": response.finish_reason,
                "completion_tokens": response.completion_tokens,
                "latency_ms": round(response.latency_ms, 3),
            },
        )

    def complete(
        self, request: ChatRequest, retry_policy: RetryPolicy | None = None
    ) -> ChatResponse:
        """Cached, rate-limited, retried completion. Never raises for provider
        failures: exhausting retries yields finish_reason=error."""
        if request.provider_id not in self.providers:
            raise PreconditionError(f"provider {request.provider_id!r} not registered")
        for img in request.image_paths():
            if not Path(img).exists():
                raise PreconditionError(f"image part missing: {img}")

        policy = retry_policy or self.retry_policy
        digest = request.digest()
        hit = self.cached(digest)
        if hit is not None:
            hit.attempt_count = 0
            self._ledger(request, hit, cache_hit=True)
            return hit

        provider = self.providers[request.provider_id]
        limiter = self.limiters[request.provider_id]
        attempts = 0
        start = time.monotonic()
        last_error = ""
        while attempts < policy.max_attempts:
            attempts += 1
            limiter.acquire()
            try:
                response = provider.send(request)
                response.attempt_count = attempts
                response.latency_ms = (time.monotonic() - start) * 1000.0
                if response.ok:
                    self._store(digest, response)
                self._ledger(request, response, cache_hit=False)
                return response
            except ProviderTransientError as exc:
                last_error = str(exc)
                if attempts < policy.max_attempts:
                    self.sleep(policy.delay(attempts, self.rand))
            except (ProviderPayloadError, GatewayError) as exc:
                last_error = str(exc)
                self.ws.diagnostic(
                    "gateway",
                    "non-retryable provider failure",
                    provider_id=request.provider_id,
                    request_digest=digest,
                    error=str(exc)[:500],
                )
                break
        failure = ChatResponse(
            text="",
            finish_reason="error",
            attempt_count=attempts,
            latency_ms=(time.monotonic() - start) * 1000.0,
        )
        self.ws.diagnostic(
            "gateway",
            "request failed",
            provider_id=request.provider_id,
            request_digest=digest,
            attempts=attempts,
            error=last_error[:500],
        )
        self._ledger(request, failure, cache_hit=False)
        return failure


def usage_report(ws: Workspace) -> dict:
    """Aggregate the call ledger per provider. Missing ledger -> empty report."""
    report: dict[str, dict] = {}
    if not ws.gateway_ledger.exists():
        return report
    for row in read_jsonl(ws.gateway_ledger):
        stats = report.setdefault(
            row["provider_id"],
            {"calls": 0, "cache_hits": 0, "failures": 0, "completion_tokens": 0},
        )
        stats["calls"] += 1
        if row.get("cache_hit"):
            stats["cache_hits"] += 1
        if row.get("finish_reason") == "error":
            stats["failures"] += 1
        if row.get("completion_tokens"):
            stats["completion_tokens"] += int(row["completion_tokens"])
    return report


# --- provider config files ---


def load_provider_config(path: str | Path) -> list[dict]:
    """Provider config in JSON always; TOML when the interpreter has tomllib."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".toml":
        try:
            import tomllib
        except ImportError as exc:
            raise GatewayError(
                "TOML provider config needs Python >= 3.11; use JSON here"
            ) from exc
        data = tomllib.loads(raw.decode("utf-8"))
    else:
        data = json.loads(raw)
    providers = data.get("providers", data if isinstance(data, list) else [])
    if not providers:
        raise GatewayError(f"{path}: no providers configured")
    return providers


def build_gateway(ws: Workspace, providers: list[dict], **kwargs) -> Gateway:
    gw = Gateway(ws, **kwargs)
    for spec in providers:
        ptype = spec.get("type", "openai")
        pid = spec["provider_id"]
        rpm = float(spec.get("requests_per_minute", 0))
        if ptype == "mock":
            fixture = spec.get("fixture")
            base = Path(fixture)
            provider = MockProvider(pid, base)
        elif ptype == "openai":
            provider = OpenAIChatProvider(
                pid, spec["base_url"], spec.get("auth_env", "")
            )
        else:
            raise GatewayError(f"unknown provider type {ptype!r}")
        gw.register(provider, rpm=rpm)
    return gw
