"""Uniform access to chat-completion services.

Every request is canonicalized and content-addressed with SHA-256 so that a
disk cache can replay a recorded session byte-for-byte. The gateway wraps a
transport (live HTTP, scripted mock, or cache-only replay) with retries, a
rate limiter, and bounded in-flight concurrency.
"""

from __future__ import annotations

import collections
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from .errors import (
    CancellationError,
    FormatError,
    ProviderError,
    TransportError,
)

__all__ = [
    "Message",
    "LlmRequest",
    "LlmExchange",
    "request_key",
    "prompt_hash",
    "ResponseCache",
    "RateLimiter",
    "Gateway",
    "HttpChatProvider",
    "MockChatProvider",
    "mock_from_fixture",
    "fixture_from_cache",
]

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 5
BACKOFF_BASE = 1.0
BACKOFF_FACTOR = 2.0
DEFAULT_MAX_TOKENS = 512
DEFAULT_MAX_IN_FLIGHT = 4


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown message role {self.role!r}")


@dataclass(frozen=True)
class LlmRequest:
    """One chat-completion call; wire shape {model, messages, temperature, max_tokens}."""

    model_id: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self):
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        msgs = tuple(self.messages)
        if not msgs:
            raise ValueError("messages must be non-empty")
        non_system = [m for m in msgs if m.role != "system"]
        if not non_system or non_system[0].role != "user":
            raise ValueError("first non-system message must have role 'user'")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        object.__setattr__(self, "messages", msgs)

    def wire_payload(self) -> dict:
        return {
            "model": self.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def request_key(request: LlmRequest) -> str:
    """SHA-256 over the canonicalized request; covers every field that
    affects the response, including temperature and max_tokens."""
    body = _canonical(
        {
            "model": request.model_id,
            "messages": [[m.role, m.content] for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
    )
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


def prompt_hash(messages: tuple[Message, ...] | list[Message]) -> str:
    """SHA-256 over the message list alone; the key used by mock fixtures.

    Independent of model id and sampling settings so a handcrafted fixture
    replays under any provider configuration.
    """
    body = _canonical([[m.role, m.content] for m in messages])
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LlmExchange:
    request: LlmRequest
    response_text: str
    provenance: str  # "live" | "cache" | "mock"
    latency_s: float = 0.0


class ResponseCache:
    """Content-addressed response store; one JSON file per request key.

    Writes go to a temp file first and are renamed into place, so a reader
    never observes a partial record.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"corrupt cache record: {exc.msg}", path=str(path)) from exc

    def put(self, key: str, record: dict) -> None:
        path = self._path(key)
        tmp = path.with_name(path.name + f".tmp{os.getpid()}")
        tmp.write_text(_canonical(record), encoding="utf-8")
        os.replace(tmp, path)

    def keys(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.json"))


class RateLimiter:
    """Sliding-window limiter: at most ``rpm`` acquisitions per 60 seconds.

    A windowed event log (rather than a refillable bucket) is used so that
    no 60-second window can ever exceed the budget, bursts included. The
    clock and sleep are injectable for virtual-time tests.
    """

    WINDOW = 60.0

    def __init__(
        self,
        rpm: int,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if rpm < 1:
            raise ValueError("rpm must be >= 1")
        self.rpm = rpm
        self.clock = clock
        self.sleep = sleep
        self._events: collections.deque[float] = collections.deque()
        self._lock = threading.Lock()
        self._closed = False

    def acquire(self) -> None:
        while True:
            with self._lock:
                if self._closed:
                    raise CancellationError("rate limiter shut down")
                now = self.clock()
                while self._events and self._events[0] <= now - self.WINDOW:
                    self._events.popleft()
                if len(self._events) < self.rpm:
                    self._events.append(now)
                    return
                wait = self._events[0] + self.WINDOW - now
            self.sleep(max(wait, 1e-3))

    def shutdown(self) -> None:
        with self._lock:
            self._closed = True


class ChatProvider(Protocol):
    kind: str

    def send(self, request: LlmRequest) -> str: ...


class HttpChatProvider:
    """Live chat-completions endpoint; reads the first choice's message content.

    The bearer credential comes from the environment variable named by
    ``credential_env`` and is never persisted anywhere.
    """

    kind = "live"

    def __init__(
        self,
        endpoint: str,
        credential_env: str | None = None,
        timeout: float = 120.0,
    ):
        self.endpoint = endpoint
        self.credential_env = credential_env
        self.timeout = timeout

    def send(self, request: LlmRequest) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.credential_env:
            token = os.environ.get(self.credential_env)
            if not token:
                raise ProviderError(f"credential env var {self.credential_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        try:
            resp = requests.post(
                self.endpoint, json=request.wire_payload(), headers=headers, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise TransportError(f"chat request failed: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderError(
                f"endpoint returned {resp.status_code}: {resp.text[:500]}",
                status=resp.status_code,
            )
        try:
            payload = resp.json()
            return payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed chat response: {exc}") from exc


class MockChatProvider:
    """Scripted provider: answers by exact prompt-hash lookup.

    Records every request it serves (``requests``/``call_count``) so tests
    can count live calls and inspect prompt content.
    """

    kind = "mock"

    def __init__(self, responses: dict[str, str], default: str | None = None):
        self.responses = dict(responses)
        self.default = default
        self.requests: list[LlmRequest] = []
        self._lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return len(self.requests)

    def send(self, request: LlmRequest) -> str:
        with self._lock:
            self.requests.append(request)
        key = prompt_hash(request.messages)
        if key in self.responses:
            return self.responses[key]
        if self.default is not None:
            return self.default
        raise ProviderError(f"mock fixture has no entry for prompt {key[:12]}…")


def mock_from_fixture(path: str | Path) -> MockChatProvider:
    """Load a JSON-lines fixture of {prompt_sha256, response} records.

    An optional header record {"default_response": ...} supplies the answer
    for prompts missing from the fixture.
    """
    path = Path(path)
    responses: dict[str, str] = {}
    default: str | None = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", path=str(path), line=lineno) from exc
            if not isinstance(rec, dict):
                raise FormatError("fixture records must be JSON objects", path=str(path), line=lineno)
            if "default_response" in rec:
                default = str(rec["default_response"])
                continue
            if "prompt_sha256" not in rec or "response" not in rec:
                raise FormatError(
                    "fixture record needs prompt_sha256 and response fields",
                    path=str(path),
                    line=lineno,
                )
            responses[str(rec["prompt_sha256"])] = str(rec["response"])
    return MockChatProvider(responses, default=default)


class _ReplayProvider:
    """Stands in when a gateway is cache-only; any miss is an error."""

    kind = "replay"

    def send(self, request: LlmRequest) -> str:
        raise ProviderError(
            f"replay cache has no record for request {request_key(request)[:12]}…"
        )


_RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


class Gateway:
    """Cache-first access to one chat provider.

    complete() consults the cache, then calls the provider under the rate
    limiter with exponential backoff (base 1s, factor 2, up to 5 attempts),
    and persists the exchange before returning it.
    """

    def __init__(
        self,
        provider: ChatProvider | None,
        cache: ResponseCache | None = None,
        limiter: RateLimiter | None = None,
        max_attempts: int = MAX_ATTEMPTS,
        backoff_base: float = BACKOFF_BASE,
        backoff_factor: float = BACKOFF_FACTOR,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
    ):
        if provider is None and cache is None:
            raise ValueError("a gateway needs a provider, a cache, or both")
        self.provider = provider if provider is not None else _ReplayProvider()
        self.cache = cache
        self.limiter = limiter
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self.sleep = sleep
        self.clock = clock
        self.max_in_flight = max_in_flight
        self._gate = threading.Semaphore(max(1, max_in_flight))

    def _send_with_retries(self, request: LlmRequest) -> str:
        delay = self.backoff_base
        last: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            if self.limiter is not None:
                self.limiter.acquire()
            try:
                return self.provider.send(request)
            except TransportError as exc:
                last = exc
            except ProviderError as exc:
                if exc.status not in _RETRYABLE_STATUS:
                    raise
                last = exc
            if attempt < self.max_attempts:
                log.warning("chat attempt %d/%d failed (%s); backing off %.1fs",
                            attempt, self.max_attempts, last, delay)
                self.sleep(delay)
                delay *= self.backoff_factor
        if isinstance(last, ProviderError):
            raise last
        raise TransportError(f"chat request failed after {self.max_attempts} attempts: {last}")

    def complete(self, request: LlmRequest) -> LlmExchange:
        key = request_key(request)
        if self.cache is not None:
            record = self.cache.get(key)
            if record is not None:
                return LlmExchange(
                    request=request,
                    response_text=record["response_text"],
                    provenance="cache",
                    latency_s=0.0,
                )
        with self._gate:
            started = self.clock()
            text = self._send_with_retries(request)
            latency = self.clock() - started
        if self.cache is not None:
            self.cache.put(
                key,
                {
                    "request": request.wire_payload(),
                    "response_text": text,
                    "origin": self.provider.kind,
                },
            )
        return LlmExchange(
            request=request,
            response_text=text,
            provenance=self.provider.kind,
            latency_s=latency,
        )


def fixture_from_cache(cache: ResponseCache, out_path: str | Path, default_response: str | None = None) -> int:
    """Convert a recorded cache into a mock fixture file; returns entry count.

    Lets a live session be replayed later as ``mock:<fixture>`` without the
    original cache directory.
    """
    out_path = Path(out_path)
    lines = []
    if default_response is not None:
        lines.append(_canonical({"default_response": default_response}))
    count = 0
    for key in sorted(Path(cache.directory).glob("*.json")):
        record = json.loads(key.read_text(encoding="utf-8"))
        messages = [Message(m["role"], m["content"]) for m in record["request"]["messages"]]
        lines.append(
            _canonical(
                {"prompt_sha256": prompt_hash(messages), "response": record["response_text"]}
            )
        )
        count += 1
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return count
