import json

import httpx
import pytest

from efsm_planner.gateway import (
    Exchange,
    GatewayConfig,
    GatewayError,
    HttpGateway,
    ReplayGateway,
    ReplayMiss,
    complete,
    record_and_replay,
    request_digest,
)

from stubserver import StubServer

MSGS = [{"role": "system", "content": "be brief"}, {"role": "user", "content": "hello"}]


def msgs(text):
    return [MSGS[0], {"role": "user", "content": text}]


class Sleeps(list):
    def __call__(self, seconds):
        self.append(seconds)


def cfg(url, **kw):
    return GatewayConfig(url, "stub-model", api_key="sk-test", **kw)


def test_config_defaults_and_checks():
    c = GatewayConfig("http://127.0.0.1:1", "m")
    assert (c.timeout, c.max_retries, c.temperature) == (60.0, 2, 0.0)
    assert [c.delay(0), c.delay(1), c.delay(5)] == [1.0, 2.0, 2.0]
    with pytest.raises(ValueError):
        GatewayConfig("http://x", "m", timeout=0)
    with pytest.raises(ValueError):
        GatewayConfig("http://x", "m", max_retries=-1)


def test_config_from_env():
    env = {"SPLANNER_API_BASE": "http://127.0.0.1:9/v1", "SPLANNER_MODEL": "m1", "SPLANNER_API_KEY": "k"}
    c = GatewayConfig.from_env(env)
    assert (c.base_url, c.model, c.api_key) == ("http://127.0.0.1:9/v1", "m1", "k")
    assert GatewayConfig.from_env(env, model="m2").model == "m2"


def test_healthy_stub_round_trip():
    with StubServer(["canned reply"]) as stub:
        gw = HttpGateway(cfg(stub.url))
        assert gw.complete(MSGS) == "canned reply"
        gw.close()
    assert len(gw.exchanges) == 1
    body = stub.requests[0]
    assert body["model"] == "stub-model"
    assert body["messages"] == MSGS
    assert body["temperature"] == 0.0
    assert stub.headers[0]["Authorization"] == "Bearer sk-test"
    ex = gw.exchanges[0]
    assert ex.reply == "canned reply" and ex.error is None and ex.status == 200
    assert ex.usage == {"prompt_tokens": 1, "completion_tokens": 1}
    assert ex.digest == request_digest(MSGS)


def test_retries_server_errors_with_backoff():
    sleeps = Sleeps()
    with StubServer([(500, "boom"), (500, "boom"), "finally"]) as stub:
        gw = HttpGateway(cfg(stub.url), sleep=sleeps)
        assert gw.complete(MSGS) == "finally"
    assert [e.status for e in gw.exchanges] == [500, 500, 200]
    assert [e.attempt for e in gw.exchanges] == [0, 1, 2]
    assert sleeps == [1.0, 2.0]


def test_gives_up_after_max_retries():
    sleeps = Sleeps()
    with StubServer([(503, "down")]) as stub:
        gw = HttpGateway(cfg(stub.url), sleep=sleeps)
        with pytest.raises(GatewayError) as exc:
            gw.complete(MSGS)
    assert exc.value.kind == "status" and exc.value.status == 503
    assert len(gw.exchanges) == 3


def test_429_is_retried():
    with StubServer([(429, "slow down"), "ok"]) as stub:
        gw = HttpGateway(cfg(stub.url), sleep=Sleeps())
        assert gw.complete(MSGS) == "ok"
    assert len(gw.exchanges) == 2


def test_401_fails_immediately():
    sleeps = Sleeps()
    with StubServer([(401, "bad key"), "never"]) as stub:
        gw = HttpGateway(cfg(stub.url), sleep=sleeps)
        with pytest.raises(GatewayError) as exc:
            gw.complete(MSGS)
    assert exc.value.kind == "status" and exc.value.status == 401
    assert str(exc.value).startswith("status(401)")
    assert len(stub.requests) == 1 and sleeps == []


def test_empty_reply_is_an_error():
    with StubServer(["   "]) as stub:
        with pytest.raises(GatewayError) as exc:
            HttpGateway(cfg(stub.url), sleep=Sleeps()).complete(MSGS)
    assert exc.value.kind == "empty_reply"
    assert len(stub.requests) == 1


def test_timeout_and_transport_errors_are_retried():
    seen = []

    def handler(request):
        seen.append(request)
        if len(seen) == 1:
            raise httpx.ReadTimeout("slow", request=request)
        if len(seen) == 2:
            raise httpx.ConnectError("refused", request=request)
        return httpx.Response(200, json={"choices": [{"message": {"content": "made it"}}]})

    gw = HttpGateway(cfg("http://127.0.0.1:9/v1"), transport=httpx.MockTransport(handler), sleep=Sleeps())
    assert gw.complete(MSGS) == "made it"
    assert [e.error for e in gw.exchanges] == ["timeout", "transport", None]
    assert str(seen[0].url) == "http://127.0.0.1:9/v1/chat/completions"


def test_timeout_surfaces_as_gateway_error():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    client = httpx.Client(transport=httpx.MockTransport(handler))
    with pytest.raises(GatewayError) as exc:
        complete(cfg("http://127.0.0.1:9", max_retries=0), MSGS, client=client)
    assert exc.value.kind == "timeout"


def test_messages_must_start_with_system():
    with pytest.raises(ValueError):
        complete(cfg("http://127.0.0.1:9"), [{"role": "user", "content": "hi"}])
    with pytest.raises(ValueError):
        ReplayGateway.__new__(ReplayGateway).complete([])


def test_record_three_calls(tmp_path):
    path = tmp_path / "t.jsonl"
    with StubServer(["a", "b", "c"]) as stub:
        gw = record_and_replay(path, "record", cfg(stub.url))
        for i in range(3):
            gw.complete(msgs(f"q{i}"))
    lines = path.read_text().splitlines()
    assert len(lines) == 3
    records = [Exchange.from_json(l) for l in lines]
    assert [r.reply for r in records] == ["a", "b", "c"]
    assert [r.call for r in records] == [0, 1, 2]
    assert all(set(json.loads(l)) >= {"digest", "messages", "reply", "latency", "timestamp"} for l in lines)


def test_transcript_holds_every_attempt(tmp_path):
    path = tmp_path / "t.jsonl"
    with StubServer([(500, "x"), "ok"]) as stub:
        gw = HttpGateway(cfg(stub.url), transcript=path, sleep=Sleeps())
        gw.complete(MSGS)
    records = [Exchange.from_json(l) for l in path.read_text().splitlines()]
    assert [(r.call, r.attempt, r.status) for r in records] == [(0, 0, 500), (0, 1, 200)]


def test_replay_serves_recorded_replies(tmp_path):
    path = tmp_path / "t.jsonl"
    with StubServer([(500, "x"), "first", "second"]) as stub:
        gw = HttpGateway(cfg(stub.url), transcript=path, sleep=Sleeps())
        gw.complete(MSGS)
        gw.complete(MSGS)
    replay = record_and_replay(path)
    assert replay.complete(MSGS) == "first"
    assert replay.complete(MSGS) == "second"
    # drained queues keep serving the last reply
    assert replay.complete(MSGS) == "second"


def test_replay_miss_on_mutated_prompt(tmp_path):
    path = tmp_path / "t.jsonl"
    with StubServer(["a"]) as stub:
        record_and_replay(path, "record", cfg(stub.url)).complete(MSGS)
    replay = ReplayGateway(path)
    with pytest.raises(ReplayMiss) as exc:
        replay.complete(msgs("hello!"))
    assert exc.value.code == "REPLAY_MISS"
    assert isinstance(exc.value, GatewayError)


def test_replayed_failure_is_a_gateway_error(tmp_path):
    path = tmp_path / "t.jsonl"
    with StubServer([(401, "nope")]) as stub:
        gw = HttpGateway(cfg(stub.url), transcript=path)
        with pytest.raises(GatewayError):
            gw.complete(MSGS)
    with pytest.raises(GatewayError) as exc:
        ReplayGateway(path).complete(MSGS)
    assert exc.value.status == 401


def test_bad_mode():
    with pytest.raises(ValueError):
        record_and_replay("x.jsonl", "sideways")
    with pytest.raises(ValueError):
        record_and_replay("x.jsonl", "record")
