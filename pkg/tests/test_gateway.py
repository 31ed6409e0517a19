from __future__ import annotations

import json
import random

import pytest

from quadforge.gateway import (
    CallableProvider,
    ChatRequest,
    ChatResponse,
    Gateway,
    ImagePart,
    Message,
    MockProvider,
    OpenAIChatProvider,
    PreconditionError,
    ProviderTransientError,
    RetryPolicy,
    Sampling,
    TextPart,
    TokenBucket,
    load_provider_config,
    usage_report,
)


def _request(text="hello", provider="mock", images=(), sampling=None) -> ChatRequest:
    parts = [ImagePart(path=str(p)) for p in images]
    parts.append(TextPart(text=text))
    return ChatRequest(
        provider_id=provider,
        model_id="m1",
        messages=[Message(role="user", parts=parts)],
        sampling=sampling or Sampling(),
    )


def _gateway(ws, provider, rpm=0.0, policy=None) -> Gateway:
    gw = Gateway(ws, retry_policy=policy or RetryPolicy(base_delay=0.001), sleep=lambda s: None)
    gw.register(provider, rpm=rpm)
    return gw


def test_digest_is_pure_function_of_fields(tmp_path):
    img = tmp_path / "x.png"
    img.write_bytes(b"pixels")
    r1 = _request("same", images=[img])
    r2 = _request("same", images=[img])
    assert r1.digest() == r2.digest()
    r3 = _request("different", images=[img])
    assert r1.digest() != r3.digest()
    # sampling participates
    r4 = _request("same", images=[img], sampling=Sampling(temperature=1.0))
    assert r4.digest() != r1.digest()


def test_digest_tracks_image_content(tmp_path):
    img = tmp_path / "x.png"
    img.write_bytes(b"pixels-a")
    d1 = _request("same", images=[img]).digest()
    img.write_bytes(b"pixels-b")
    d2 = _request("same", images=[img]).digest()
    assert d1 != d2


def test_cache_hit_has_zero_attempts(ws):
    provider = MockProvider("mock", {"default": "cached answer"})
    gw = _gateway(ws, provider)
    first = gw.complete(_request())
    assert first.attempt_count == 1
    second = gw.complete(_request())
    assert second.attempt_count == 0
    assert second.text == "cached answer"
    assert provider.calls == 1


def test_429_twice_then_success_counts_three_attempts(ws):
    provider = MockProvider("mock", {"default": "ok", "fail_first": 2})
    gw = _gateway(ws, provider)
    response = gw.complete(_request())
    assert response.finish_reason == "stop"
    assert response.attempt_count == 3


def test_exhausted_retries_yield_error_response(ws):
    provider = MockProvider("mock", {"default": "ok", "fail_first": 99})
    gw = _gateway(ws, provider)
    response = gw.complete(_request())
    assert response.finish_reason == "error"
    assert response.attempt_count == 3
    # and errors are never cached: a healthy provider succeeds afterwards
    provider.fail_remaining = 0
    retry = gw.complete(_request())
    assert retry.finish_reason == "stop"
    assert retry.attempt_count == 1


def test_missing_image_is_a_precondition_error(ws, tmp_path):
    provider = MockProvider("mock", {"default": "ok"})
    gw = _gateway(ws, provider)
    with pytest.raises(PreconditionError, match="image part missing"):
        gw.complete(_request(images=[tmp_path / "nope.png"]))
    assert provider.calls == 0


def test_unregistered_provider_rejected(ws):
    gw = _gateway(ws, MockProvider("mock", {"default": "ok"}))
    with pytest.raises(PreconditionError, match="not registered"):
        gw.complete(_request(provider="other"))


def test_backoff_is_monotone(ws):
    policy = RetryPolicy(max_attempts=8, base_delay=1.0, multiplier=2.0, jitter=0.2)
    rng = random.Random(123)
    for _ in range(1000):
        delays = [policy.delay(i, rng.random) for i in range(1, 8)]
        assert all(b >= a for a, b in zip(delays, delays[1:]))


def test_error_responses_never_cached(ws):
    provider = CallableProvider(
        "mock", lambda req: ChatResponse(text="", finish_reason="error")
    )
    gw = _gateway(ws, provider)
    gw.complete(_request())
    assert not any(ws.cache_dir.glob("*.json"))


def test_usage_report_counts(ws):
    provider = MockProvider("mock", {"default": "ok"})
    gw = _gateway(ws, provider)
    for text in ["a", "b", "c"]:
        gw.complete(_request(text))
    gw.complete(_request("a"))
    gw.complete(_request("b"))
    report = usage_report(ws)
    assert report["mock"]["calls"] == 5
    assert report["mock"]["cache_hits"] == 2
    assert report["mock"]["failures"] == 0


def test_usage_report_empty_workspace(ws):
    assert usage_report(ws) == {}


def test_usage_report_grouped_by_provider(ws):
    gw = Gateway(ws, sleep=lambda s: None)
    gw.register(MockProvider("p1", {"default": "x"}))
    gw.register(MockProvider("p2", {"default": "y"}))
    gw.complete(_request("q", provider="p1"))
    gw.complete(_request("q", provider="p2"))
    report = usage_report(ws)
    assert set(report) == {"p1", "p2"}


def test_mock_by_digest_mapping(ws):
    request = _request("keyed")
    provider = MockProvider(
        "mock", {"by_digest": {request.digest(): "digest-matched"}, "default": "nope"}
    )
    gw = _gateway(ws, provider)
    assert gw.complete(request).text == "digest-matched"


def test_mock_rules_and_sequence(ws):
    provider = MockProvider(
        "mock",
        {
            "rules": [
                {"contains": ["alpha", "beta"], "response": "both"},
                {"contains": "alpha", "response": "just alpha"},
            ],
            "sequence": ["first", "second"],
        },
    )
    gw = _gateway(ws, provider)
    assert gw.complete(_request("alpha beta gamma")).text == "both"
    assert gw.complete(_request("alpha only")).text == "just alpha"
    assert gw.complete(_request("nothing matches")).text == "first"
    assert gw.complete(_request("still nothing")).text == "second"


def test_cache_soundness_replay_with_warm_cache(ws):
    provider = MockProvider("mock", {"sequence": ["one", "two"]})
    gw = _gateway(ws, provider)
    first = [gw.complete(_request("q1")).text, gw.complete(_request("q2")).text]
    fresh_provider = MockProvider("mock", {})  # would fail if consulted
    gw2 = _gateway(ws, fresh_provider)
    replay = [gw2.complete(_request("q1")).text, gw2.complete(_request("q2")).text]
    assert replay == first
    assert fresh_provider.calls == 0


def test_token_bucket_blocks_until_refill():
    clock = {"t": 0.0}
    sleeps = []

    def fake_sleep(s):
        sleeps.append(s)
        clock["t"] += s

    bucket = TokenBucket(rpm=60, clock=lambda: clock["t"], sleep=fake_sleep)
    bucket.acquire()  # first token free at capacity
    for _ in range(60):
        bucket.acquire()
    assert sleeps, "bucket should have blocked at least once"
    assert all(s > 0 for s in sleeps)


def test_openai_provider_against_mock_transport(ws, tmp_path):
    import httpx

    def handler(req: httpx.Request) -> httpx.Response:
        payload = json.loads(req.content)
        assert payload["model"] == "m1"
        assert payload["messages"][0]["content"][0]["type"] == "text"
        return httpx.Response(
            200,
            json={
                "choices": [
                    {"message": {"content": "wire reply"}, "finish_reason": "stop"}
                ],
                "usage": {"completion_tokens": 7},
            },
        )

    provider = OpenAIChatProvider(
        "api", "http://fake.local/v1", transport=httpx.MockTransport(handler)
    )
    gw = _gateway(ws, provider)
    response = gw.complete(_request("hi", provider="api"))
    assert response.text == "wire reply"
    assert response.completion_tokens == 7


def test_openai_provider_retries_on_500(ws):
    import httpx

    calls = {"n": 0}

    def handler(req: httpx.Request) -> httpx.Response:
        calls["n"] += 1
        if calls["n"] < 3:
            return httpx.Response(500, text="boom")
        return httpx.Response(
            200,
            json={"choices": [{"message": {"content": "ok"}, "finish_reason": "stop"}]},
        )

    provider = OpenAIChatProvider(
        "api", "http://fake.local/v1", transport=httpx.MockTransport(handler)
    )
    gw = _gateway(ws, provider)
    response = gw.complete(_request("retry me", provider="api"))
    assert response.text == "ok"
    assert response.attempt_count == 3


def test_openai_malformed_payload_is_error_response_with_log(ws):
    import httpx

    provider = OpenAIChatProvider(
        "api",
        "http://fake.local/v1",
        transport=httpx.MockTransport(
            lambda req: httpx.Response(200, json={"unexpected": True})
        ),
    )
    gw = _gateway(ws, provider)
    response = gw.complete(_request("bad payload", provider="api"))
    assert response.finish_reason == "error"
    assert ws.diagnostics_log.exists()


def test_provider_config_json(tmp_path):
    config = tmp_path / "providers.json"
    config.write_text(
        json.dumps(
            {
                "providers": [
                    {"provider_id": "a", "type": "openai", "base_url": "http://x",
                     "auth_env": "KEY", "requests_per_minute": 30}
                ]
            }
        ),
        encoding="utf-8",
    )
    providers = load_provider_config(config)
    assert providers[0]["provider_id"] == "a"
