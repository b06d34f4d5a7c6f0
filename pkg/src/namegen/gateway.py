"""Uniform chat-completion gateway.

One Gateway fronts any transport (remote HTTP provider, deterministic
scripted mock, or a record/replay cassette) and adds retries with
exponential backoff, optional rate limiting, and per-stage call accounting.
The ledger counts logical calls: a call that succeeds after retries counts
once, a call that never succeeds counts zero.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx

from .core import NamegenError, ValidationError

DEFAULT_API_KEY_ENV = "NAMEGEN_API_KEY"
DEFAULT_BASE_URL_ENV = "NAMEGEN_BASE_URL"


class GatewayError(NamegenError):
    """Base class for backend/transport failures."""


class TransportError(GatewayError):
    """Transient transport failure; the gateway may retry it."""


class RateLimitedError(TransportError):
    """Provider signalled a rate limit; retried after backoff."""


class AuthError(GatewayError):
    """Credentials rejected by the provider. Never retried."""


class EmptyResponseError(GatewayError):
    """Backend kept returning empty text."""


class ScriptedMissError(GatewayError):
    """A scripted mock saw a prompt no rule matches - a test-authoring bug."""


class CassetteMissError(GatewayError):
    """Replay transport has no recording for this request."""


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


class CallStage(str, Enum):
    RETRIEVAL = "retrieval"
    GENERATION = "generation"
    IMPLICIT_EVAL = "implicit_eval"
    EXPLICIT_EVAL = "explicit_eval"
    PREPARATION = "preparation"


@dataclass(frozen=True, slots=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self) -> None:
        if not self.content.strip():
            raise ValidationError("message content must be non-empty")


def system(content: str) -> ChatMessage:
    return ChatMessage(Role.SYSTEM, content)


def user(content: str) -> ChatMessage:
    return ChatMessage(Role.USER, content)


def assistant(content: str) -> ChatMessage:
    return ChatMessage(Role.ASSISTANT, content)


@dataclass(frozen=True, slots=True)
class DecodingParams:
    temperature: float = 0.2
    max_tokens: int = 1024
    seed: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValidationError("temperature must be in [0, 2]")
        if self.max_tokens <= 0:
            raise ValidationError("max_tokens must be positive")


#: Creative decoding for the generator role; evaluation/management calls
#: stay near-greedy for repeatability.
GENERATOR_PARAMS = DecodingParams(temperature=1.5)
MANAGER_PARAMS = DecodingParams(temperature=0.2)
EVALUATOR_PARAMS = DecodingParams(temperature=0.2)


class CallLedger:
    """Thread-safe per-stage counter of completed backend calls."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._counts: dict[CallStage, int] = {stage: 0 for stage in CallStage}

    def increment(self, stage: CallStage) -> None:
        with self._lock:
            self._counts[stage] += 1

    def count(self, stage: CallStage) -> int:
        with self._lock:
            return self._counts[stage]

    @property
    def total(self) -> int:
        with self._lock:
            return sum(self._counts.values())

    def snapshot(self) -> dict[str, int]:
        """Stage counts plus total, as plain strings for serialization."""
        with self._lock:
            counts = {stage.value: n for stage, n in self._counts.items()}
        counts["total"] = sum(n for k, n in counts.items())
        return counts


class RateLimiter(Protocol):
    def acquire(self) -> None: ...


class TokenBucket:
    """Simple blocking token bucket, shareable across worker threads."""

    def __init__(
        self,
        rate_per_sec: float,
        capacity: int = 1,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if rate_per_sec <= 0:
            raise ValidationError("rate_per_sec must be positive")
        self._rate = rate_per_sec
        self._capacity = max(1, capacity)
        self._tokens = float(self._capacity)
        self._clock = clock
        self._sleep = sleep
        self._updated = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(
                    self._capacity, self._tokens + (now - self._updated) * self._rate
                )
                self._updated = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self._rate
            self._sleep(wait)


class Transport(Protocol):
    """Anything that can turn a message list into assistant text."""

    def send(self, messages: Sequence[ChatMessage], params: DecodingParams) -> str: ...


ScriptRule = tuple["str | re.Pattern[str]", str]


class ScriptedTransport:
    """Deterministic mock: ordered (matcher, reply) rules, first match wins.

    A matcher is either a literal substring or a compiled regular expression
    searched against the concatenated prompt text. Matching is stateless, so
    behaviour is identical under any thread interleaving.
    """

    def __init__(self, rules: Sequence[ScriptRule]) -> None:
        if not rules:
            raise ValidationError("a scripted transport needs at least one rule")
        self._rules = list(rules)

    def send(self, messages: Sequence[ChatMessage], params: DecodingParams) -> str:
        prompt = "\n".join(m.content for m in messages)
        for matcher, reply in self._rules:
            if isinstance(matcher, re.Pattern):
                if matcher.search(prompt):
                    return reply
            elif matcher in prompt:
                return reply
        head = prompt[:200].replace("\n", " | ")
        raise ScriptedMissError(f"no scripted rule matches prompt: {head!r}")


def mock_script(rules: Sequence[ScriptRule]) -> ScriptedTransport:
    """Build a scripted mock backend from ordered (matcher, reply) rules."""
    return ScriptedTransport(rules)


def request_digest(messages: Sequence[ChatMessage], params: DecodingParams) -> str:
    """Stable content digest used to key cassette recordings."""
    payload = {
        "messages": [{"role": m.role.value, "content": m.content} for m in messages],
        "params": {
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "seed": params.seed,
        },
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class RecordingTransport:
    """Wraps a live transport and appends every exchange to a cassette file
    (one JSON object per line: request_digest, response_text)."""

    def __init__(self, inner: Transport, path: str | Path) -> None:
        self._inner = inner
        self._path = Path(path)
        self._lock = threading.Lock()

    def send(self, messages: Sequence[ChatMessage], params: DecodingParams) -> str:
        text = self._inner.send(messages, params)
        record = {
            "request_digest": request_digest(messages, params),
            "response_text": text,
        }
        with self._lock:
            with self._path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
        return text


class ReplayTransport:
    """Serves responses from a cassette file with zero network activity."""

    def __init__(self, path: str | Path) -> None:
        self._responses: dict[str, str] = {}
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                self._responses[record["request_digest"]] = record["response_text"]

    def send(self, messages: Sequence[ChatMessage], params: DecodingParams) -> str:
        digest = request_digest(messages, params)
        try:
            return self._responses[digest]
        except KeyError:
            raise CassetteMissError(f"no recording for request digest {digest}") from None


class HttpTransport:
    """Remote provider speaking the common chat-completions JSON shape."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self._client = client or httpx.Client(timeout=timeout)

    @classmethod
    def from_env(cls, model: str, **kwargs) -> "HttpTransport":
        base_url = os.environ.get(DEFAULT_BASE_URL_ENV)
        if not base_url:
            raise GatewayError(f"{DEFAULT_BASE_URL_ENV} is not set")
        return cls(base_url, model, api_key=os.environ.get(DEFAULT_API_KEY_ENV), **kwargs)

    def send(self, messages: Sequence[ChatMessage], params: DecodingParams) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": m.role.value, "content": m.content} for m in messages],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.seed is not None:
            payload["seed"] = params.seed
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(
                f"{self.base_url}/chat/completions", json=payload, headers=headers
            )
        except httpx.HTTPError as exc:
            raise TransportError(f"transport failure: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"provider rejected credentials (HTTP {resp.status_code})")
        if resp.status_code == 429:
            raise RateLimitedError("provider rate limit (HTTP 429)")
        if resp.status_code >= 500:
            raise TransportError(f"provider error (HTTP {resp.status_code})")
        if resp.status_code != 200:
            raise GatewayError(f"unexpected HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise GatewayError(f"malformed provider response: {exc}") from exc


@dataclass
class Gateway:
    """Retrying, rate-limited, ledger-keeping front door to one transport."""

    transport: Transport
    ledger: CallLedger = field(default_factory=CallLedger)
    max_attempts: int = 3
    backoff_base: float = 0.5
    rate_limiter: RateLimiter | None = None
    sleep: Callable[[float], None] = time.sleep

    def complete(
        self,
        messages: Sequence[ChatMessage],
        params: DecodingParams,
        *,
        stage: CallStage,
    ) -> str:
        """Run one logical chat call and return non-empty assistant text.

        Transient failures are retried with exponential backoff up to
        max_attempts; the stage counter increments once, on success.
        """
        if not messages:
            raise ValidationError("messages must be non-empty")
        if messages[0].role is Role.ASSISTANT:
            raise ValidationError("first message must be system or user")

        last_error: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            if self.rate_limiter is not None:
                self.rate_limiter.acquire()
            try:
                text = self.transport.send(messages, params)
            except (TransportError, RateLimitedError) as exc:
                last_error = exc
                if attempt < self.max_attempts:
                    self.sleep(self.backoff_base * (2 ** (attempt - 1)))
                continue
            if text.strip():
                self.ledger.increment(stage)
                return text
            last_error = EmptyResponseError("backend returned empty text")
            if attempt < self.max_attempts:
                self.sleep(self.backoff_base * (2 ** (attempt - 1)))

        if isinstance(last_error, EmptyResponseError):
            raise last_error
        raise TransportError(
            f"gave up after {self.max_attempts} attempts: {last_error}"
        ) from last_error
