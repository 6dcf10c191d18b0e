"""Language-model gateway: scripted and HTTP backends, retries, call accounting.

A backend is any object with ``complete(request) -> LmResponse``. The
:class:`Gateway` wraps a backend with a retry policy, a concurrency limit
and a call log so that per-role usage (feedbacker, rewriter, system agent)
can be accounted for after a run.
"""

from __future__ import annotations

import contextlib
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Mapping, Sequence, Union

import httpx

from .core import ChatMessage
from .errors import InvalidArgumentError, ProtocolError, TransientError, TransportError

logger = logging.getLogger(__name__)

FINISH_REASONS = ("stop", "length", "error")

# Default sampling temperature per agent role.
DEFAULT_TEMPERATURES = {
    "system-agent": 0.7,
    "feedbacker": 0.0,
    "rewriter": 1.0,
    "prompt-writer": 1.0,
}


@dataclass(frozen=True)
class LmRequest:
    model_id: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 1024
    tag: str = ""

    def __post_init__(self) -> None:
        if not self.messages:
            raise InvalidArgumentError("request needs at least one message")
        if self.temperature < 0:
            raise InvalidArgumentError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise InvalidArgumentError("max_tokens must be > 0")

    @property
    def role(self) -> str:
        """Agent role, i.e. the tag up to the first dot ("feedbacker.summary" -> "feedbacker")."""
        return self.tag.split(".", 1)[0]

    @property
    def content(self) -> str:
        return "\n".join(m.content for m in self.messages)

    def to_dict(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "messages": [m.to_dict() for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "tag": self.tag,
        }


@dataclass(frozen=True)
class Usage:
    prompt_units: int = 0
    completion_units: int = 0


@dataclass(frozen=True)
class LmResponse:
    text: str
    finish_reason: str = "stop"
    usage: Usage = field(default_factory=Usage)

    def __post_init__(self) -> None:
        if self.finish_reason not in FINISH_REASONS:
            raise InvalidArgumentError(f"unknown finish_reason {self.finish_reason!r}")
        if self.finish_reason == "error" and self.text:
            raise InvalidArgumentError("error responses carry no text")

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "finish_reason": self.finish_reason,
            "usage": {"prompt_units": self.usage.prompt_units,
                      "completion_units": self.usage.completion_units},
        }


Responder = Union[str, Callable[[LmRequest], str]]


@dataclass(frozen=True)
class Rule:
    """Scripted rule: matches when the tag is equal (if given) and every
    ``contains`` substring occurs in the concatenated message contents.

    ``response`` is either canned text or a pure function of the request.
    """

    response: Responder
    tag: str | None = None
    contains: str | Sequence[str] = ()

    def matches(self, request: LmRequest) -> bool:
        if self.tag is not None and request.tag != self.tag:
            return False
        needles = (self.contains,) if isinstance(self.contains, str) else self.contains
        content = request.content
        return all(n in content for n in needles)


class ScriptedBackend:
    """Deterministic backend: the first matching rule answers."""

    def __init__(self, rules: Sequence[Rule] = (), default_response: str = ""):
        self.rules = list(rules)
        self.default_response = default_response

    def complete(self, request: LmRequest) -> LmResponse:
        for rule in self.rules:
            if rule.matches(request):
                resp = rule.response
                text = resp(request) if callable(resp) else resp
                return LmResponse(text=text)
        return LmResponse(text=self.default_response)

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> ScriptedBackend:
        rules = [Rule(response=r["response"], tag=r.get("tag"), contains=r.get("contains", ()))
                 for r in cfg.get("rules", [])]
        return cls(rules, cfg.get("default_response", ""))


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff: tuple[float, ...] = (1.0, 2.0, 4.0)

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise InvalidArgumentError("max_attempts must be >= 1")

    def delay(self, attempt: int) -> float:
        """Seconds to wait after the given failed attempt (1-based)."""
        if not self.backoff:
            return 0.0
        return self.backoff[min(attempt, len(self.backoff)) - 1]


def with_retry(policy: RetryPolicy, call: Callable[[], LmResponse],
               sleep: Callable[[float], None] = time.sleep) -> LmResponse:
    """Invoke ``call`` until it succeeds or ``policy.max_attempts`` is reached.

    Only :class:`TransientError` is retried; anything else propagates at once.
    """
    last: Exception | None = None
    for attempt in range(1, policy.max_attempts + 1):
        try:
            return call()
        except TransientError as exc:
            last = exc
            logger.warning("attempt %d/%d failed: %s", attempt, policy.max_attempts, exc)
            if attempt < policy.max_attempts:
                sleep(policy.delay(attempt))
    raise TransportError(str(last), attempts=policy.max_attempts)


class HttpBackend:
    """Chat-completion style HTTP backend.

    Sends ``{model, messages, temperature, max_tokens}`` and reads
    ``choices[0].message.content``, ``choices[0].finish_reason`` and
    ``usage.prompt_tokens``/``usage.completion_tokens``.
    """

    RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}

    def __init__(self, base_url: str, path: str = "/v1/chat/completions",
                 key_env: str | None = None, timeout: float = 60.0,
                 client: httpx.Client | None = None):
        self.url = base_url.rstrip("/") + "/" + path.lstrip("/")
        self.key_env = key_env
        self.timeout = timeout
        self._client = client or httpx.Client(timeout=timeout)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.key_env:
            key = os.environ.get(self.key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, request: LmRequest) -> LmResponse:
        body = {
            "model": request.model_id,
            "messages": [m.to_dict() for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        try:
            resp = self._client.post(self.url, json=body, headers=self._headers())
        except httpx.TransportError as exc:
            raise TransientError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code in self.RETRY_STATUS:
            raise TransientError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        return parse_chat_completion(resp)


def parse_chat_completion(resp: httpx.Response) -> LmResponse:
    try:
        payload = resp.json()
        choice = payload["choices"][0]
        text = choice["message"]["content"] or ""
        finish = choice.get("finish_reason") or "stop"
        usage = payload.get("usage") or {}
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"malformed chat completion payload: {exc!r}") from exc
    if finish not in FINISH_REASONS:
        # provider-specific reasons such as "content_filter" or "tool_calls"
        finish = "stop"
    if finish == "error":
        text = ""
    return LmResponse(
        text=text,
        finish_reason=finish,
        usage=Usage(int(usage.get("prompt_tokens", 0) or 0),
                    int(usage.get("completion_tokens", 0) or 0)),
    )


def complete(backend: Any, request: LmRequest) -> LmResponse:
    return backend.complete(request)


@dataclass(frozen=True)
class CallRecord:
    request: LmRequest
    response: LmResponse

    def to_dict(self) -> dict[str, Any]:
        return {"tag": self.request.tag, "request": self.request.to_dict(),
                "response": self.response.to_dict()}


_capture = threading.local()


@contextlib.contextmanager
def capture_calls() -> Iterator[list[CallRecord]]:
    """Collect every gateway call made by the current thread inside the block."""
    stack = getattr(_capture, "stack", None)
    if stack is None:
        stack = _capture.stack = []
    calls: list[CallRecord] = []
    stack.append(calls)
    try:
        yield calls
    finally:
        stack.pop()


class Gateway:
    """A backend bound to one model, with retries, a concurrency cap and a call log."""

    def __init__(self, backend: Any, model_id: str = "scripted", *,
                 temperature: float | None = None, max_tokens: int = 1024,
                 retry: RetryPolicy | None = None, max_inflight: int = 4,
                 sleep: Callable[[float], None] = time.sleep):
        self.backend = backend
        self.model_id = model_id
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.retry = retry or RetryPolicy()
        self.calls: list[CallRecord] = []
        self._lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(max_inflight)
        self._sleep = sleep

    def request(self, messages: Sequence[ChatMessage], tag: str,
                temperature: float | None = None) -> LmRequest:
        if temperature is None:
            temperature = self.temperature
        if temperature is None:
            temperature = DEFAULT_TEMPERATURES.get(tag.split(".", 1)[0], 0.0)
        return LmRequest(model_id=self.model_id, messages=tuple(messages),
                         temperature=temperature, max_tokens=self.max_tokens, tag=tag)

    def complete(self, request: LmRequest) -> LmResponse:
        def attempt() -> LmResponse:
            with self._slots:
                return self.backend.complete(request)

        response = with_retry(self.retry, attempt, sleep=self._sleep)
        record = CallRecord(request, response)
        with self._lock:
            self.calls.append(record)
        for sink in getattr(_capture, "stack", None) or ():
            sink.append(record)
        return response

    def chat(self, messages: Sequence[ChatMessage], tag: str,
             temperature: float | None = None) -> str:
        return self.complete(self.request(messages, tag, temperature)).text

    def usage_by_role(self) -> dict[str, Usage]:
        totals: dict[str, list[int]] = {}
        for c in self.calls:
            t = totals.setdefault(c.request.role, [0, 0])
            t[0] += c.response.usage.prompt_units
            t[1] += c.response.usage.completion_units
        return {k: Usage(*v) for k, v in totals.items()}

    def calls_tagged(self, role: str) -> list[CallRecord]:
        return [c for c in self.calls if c.request.role == role]
