"""Chat-completions client with retries, transcripts and offline replay.

Every component that talks to a language model goes through a *gateway
handle*: any object with a ``complete(messages) -> str`` method.  Three are
provided:

* :class:`HttpGateway` posts to ``{base_url}/chat/completions``;
  with a ``transcript`` path it also records every attempt (record mode).
* :class:`ReplayGateway` serves replies from a recorded transcript, keyed by
  a digest of the request messages, so tests never touch the network.
* :func:`record_and_replay` picks one of the two.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from collections import defaultdict, deque
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

import httpx

ENV_BASE = "SPLANNER_API_BASE"
ENV_KEY = "SPLANNER_API_KEY"
ENV_MODEL = "SPLANNER_MODEL"

RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})


class GatewayError(Exception):
    """Transport-level failure.  ``kind`` is one of timeout, transport,
    status, empty_reply or replay_miss."""

    def __init__(self, kind: str, message: str = "", status: Optional[int] = None):
        self.kind = kind
        self.status = status
        label = f"status({status})" if kind == "status" else kind
        super().__init__(f"{label}: {message}" if message else label)


class ReplayMiss(GatewayError):
    code = "REPLAY_MISS"

    def __init__(self, digest: str):
        self.digest = digest
        super().__init__("replay_miss", f"no recorded reply for request {digest[:12]}")


@dataclass(frozen=True)
class GatewayConfig:
    base_url: str
    model: str
    api_key: Optional[str] = None
    timeout: float = 60.0
    max_retries: int = 2
    temperature: float = 0.0
    seed: Optional[int] = None
    backoff: tuple[float, ...] = (1.0, 2.0)

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if not self.base_url:
            raise ValueError("base_url is required")

    @classmethod
    def from_env(cls, environ=None, **overrides) -> "GatewayConfig":
        """Config from ``SPLANNER_*`` variables; non-None overrides win."""
        env = os.environ if environ is None else environ
        values = {
            "base_url": env.get(ENV_BASE, ""),
            "model": env.get(ENV_MODEL, ""),
            "api_key": env.get(ENV_KEY),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def delay(self, attempt: int) -> float:
        """Backoff before retry number *attempt* (0-based)."""
        if not self.backoff:
            return 0.0
        return self.backoff[min(attempt, len(self.backoff) - 1)]


def request_digest(messages) -> str:
    canonical = json.dumps([{"role": m["role"], "content": m["content"]} for m in messages],
                           sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class Exchange:
    """One request attempt and what came back."""

    messages: list
    reply: Optional[str]
    latency: float
    timestamp: str
    digest: str
    call: int = 0
    attempt: int = 0
    error: Optional[str] = None
    status: Optional[int] = None
    usage: Optional[dict] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Exchange":
        return cls(**json.loads(line))


def _check_messages(messages):
    if not messages:
        raise ValueError("messages must not be empty")
    if messages[0].get("role") != "system":
        raise ValueError("first message must have the system role")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def complete(
    cfg: GatewayConfig,
    messages,
    *,
    client: Optional[httpx.Client] = None,
    sleep: Callable[[float], None] = time.sleep,
    on_exchange: Optional[Callable[[Exchange], None]] = None,
    call: int = 0,
) -> str:
    """Send *messages* and return the assistant reply text.

    Transport errors, timeouts and 5xx/429 statuses are retried up to
    ``cfg.max_retries`` times; other 4xx statuses fail at once.
    """
    _check_messages(messages)
    messages = [{"role": m["role"], "content": m["content"]} for m in messages]
    digest = request_digest(messages)
    url = cfg.base_url.rstrip("/") + "/chat/completions"
    headers = {"Content-Type": "application/json"}
    if cfg.api_key:
        headers["Authorization"] = f"Bearer {cfg.api_key}"
    body = {"model": cfg.model, "messages": messages, "temperature": cfg.temperature}
    if cfg.seed is not None:
        body["seed"] = cfg.seed

    own_client = client is None
    if own_client:
        client = httpx.Client(timeout=cfg.timeout)
    try:
        attempt = 0
        while True:
            started = time.monotonic()
            stamp = _now()
            error: Optional[GatewayError] = None
            reply = None
            status = None
            usage = None
            try:
                resp = client.post(url, json=body, headers=headers, timeout=cfg.timeout)
                status = resp.status_code
                if status >= 400:
                    error = GatewayError("status", resp.text[:200], status)
                else:
                    try:
                        data = resp.json()
                        reply = data["choices"][0]["message"]["content"]
                        usage = data.get("usage")
                    except (ValueError, KeyError, IndexError, TypeError):
                        reply = None
                    if not reply or not str(reply).strip():
                        error = GatewayError("empty_reply", "reply had no message content")
                        reply = None
            except httpx.TimeoutException as exc:
                error = GatewayError("timeout", str(exc))
            except httpx.TransportError as exc:
                error = GatewayError("transport", str(exc))
            if on_exchange is not None:
                on_exchange(Exchange(
                    messages=messages, reply=reply, latency=round(time.monotonic() - started, 6),
                    timestamp=stamp, digest=digest, call=call, attempt=attempt,
                    error=None if error is None else error.kind, status=status, usage=usage,
                ))
            if error is None:
                return reply
            retryable = error.kind in ("timeout", "transport") or (
                error.kind == "status" and error.status in RETRY_STATUSES
            )
            if not retryable or attempt >= cfg.max_retries:
                raise error
            sleep(cfg.delay(attempt))
            attempt += 1
    finally:
        if own_client:
            client.close()


class HttpGateway:
    """Gateway handle backed by a live chat-completions endpoint.

    ``exchanges`` keeps every attempt in order.  Given *transcript*, each
    attempt is also appended to that file as one JSON line.
    """

    def __init__(self, cfg: GatewayConfig, *, transport=None, sleep=time.sleep, transcript=None):
        self.cfg = cfg
        self.exchanges: list[Exchange] = []
        self.transcript = Path(transcript) if transcript else None
        self._sleep = sleep
        self._lock = threading.Lock()
        self._calls = 0
        self._client = httpx.Client(timeout=cfg.timeout, transport=transport)

    def _record(self, ex: Exchange):
        with self._lock:
            self.exchanges.append(ex)
            if self.transcript is not None:
                with self.transcript.open("a", encoding="utf-8") as fh:
                    fh.write(ex.to_json() + "\n")

    def complete(self, messages) -> str:
        with self._lock:
            call = self._calls
            self._calls += 1
        return complete(self.cfg, messages, client=self._client, sleep=self._sleep,
                        on_exchange=self._record, call=call)

    def close(self):
        self._client.close()


@dataclass
class _Outcome:
    reply: Optional[str]
    error: Optional[str]
    status: Optional[int] = None


class ReplayGateway:
    """Serve replies recorded in a transcript file.

    Attempts belonging to the same call collapse to that call's final
    outcome; repeated identical requests are served in recorded order, the
    last one being reused once the queue is drained.  A request that was
    never recorded raises :class:`ReplayMiss`.
    """

    def __init__(self, transcript):
        self.path = Path(transcript)
        self.served: list[str] = []
        self._lock = threading.Lock()
        calls: dict[int, Exchange] = {}
        order: list[int] = []
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            ex = Exchange.from_json(line)
            if ex.call not in calls:
                order.append(ex.call)
            calls[ex.call] = ex  # later attempts supersede earlier ones
        self._queues: dict[str, deque] = defaultdict(deque)
        self._last: dict[str, _Outcome] = {}
        for c in order:
            ex = calls[c]
            self._queues[ex.digest].append(_Outcome(ex.reply, ex.error, ex.status))

    def complete(self, messages) -> str:
        _check_messages(messages)
        digest = request_digest(messages)
        with self._lock:
            queue = self._queues.get(digest)
            if queue:
                outcome = queue.popleft()
                self._last[digest] = outcome
            elif digest in self._last:
                outcome = self._last[digest]
            else:
                raise ReplayMiss(digest)
            self.served.append(digest)
        if outcome.error:
            raise GatewayError(outcome.error, "replayed failure", outcome.status)
        return outcome.reply


def record_and_replay(transcript, mode: str = "replay", cfg: Optional[GatewayConfig] = None, **kwargs):
    """Gateway handle bound to *transcript*.

    ``mode="replay"`` reads the file; ``mode="record"`` talks to the endpoint
    in *cfg* and appends every exchange to it.
    """
    if mode == "replay":
        return ReplayGateway(transcript)
    if mode == "record":
        if cfg is None:
            raise ValueError("record mode needs a GatewayConfig")
        return HttpGateway(cfg, transcript=transcript, **kwargs)
    raise ValueError(f"unknown mode {mode!r}")
