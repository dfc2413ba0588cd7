"""Completion-service contract, an HTTP chat-completions client, scripted
mocks and record/replay cassettes.

Every prompt in the pipeline goes through a client exposing
``complete(CompletionRequest) -> str``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol

import httpx

from .errors import BackendError, ConfigError

logger = logging.getLogger(__name__)

DEFAULT_MAX_INFLIGHT = 8
DEFAULT_TIMEOUT = 120.0


class LLMError(BackendError):
    pass


class TransientLLMError(LLMError):
    """Retryable failure: network error, 429 or 5xx."""


class AuthenticationError(LLMError):
    pass


class ContextLengthError(LLMError):
    """The prompt exceeds the model's context window; callers may truncate and retry."""


class RetriesExhausted(LLMError):
    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class MockExhausted(LLMError):
    pass


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float = 0.0
    max_output_tokens: int = 1024
    model_id: str = ""

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


class CompletionClient(Protocol):
    def complete(self, request: CompletionRequest) -> str: ...


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def call_with_retries(
    fn: Callable[[], str],
    attempts: int = 3,
    base_delay: float = 1.0,
    jitter: float = 0.25,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
) -> tuple[str, int]:
    """Run ``fn`` retrying :class:`TransientLLMError` with exponential backoff.

    Returns ``(result, attempts_used)``. Delay before retry ``n`` (1-based) is
    ``base_delay * 2**(n-1)`` scaled by a random factor in ``[1, 1 + jitter]``.
    """
    rng = rng or random.Random()
    last: Exception | None = None
    for attempt in range(1, attempts + 1):
        try:
            return fn(), attempt
        except TransientLLMError as exc:
            last = exc
            logger.warning("completion attempt %d/%d failed: %s", attempt, attempts, exc)
            if attempt < attempts:
                sleep(base_delay * 2 ** (attempt - 1) * (1.0 + jitter * rng.random()))
    raise RetriesExhausted(f"completion failed after {attempts} attempts: {last}", attempts)


class ChatCompletionsClient:
    """Client for a chat-completions style endpoint.

    Sends ``{"model", "messages": [{"role": "user", "content": prompt}],
    "temperature", "max_tokens"}`` and reads ``choices[0].message.content``.
    Connection settings default to ``RRPIPE_LLM_URL``, ``RRPIPE_LLM_API_KEY``
    and ``RRPIPE_LLM_MODEL``.
    """

    def __init__(
        self,
        url: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        attempts: int = 3,
        base_delay: float = 1.0,
        max_inflight: int = DEFAULT_MAX_INFLIGHT,
        timeout: float = DEFAULT_TIMEOUT,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        run_id: str | None = None,
    ):
        self.url = url or os.environ.get("RRPIPE_LLM_URL", "")
        self.api_key = api_key if api_key is not None else os.environ.get("RRPIPE_LLM_API_KEY", "")
        self.model = model or os.environ.get("RRPIPE_LLM_MODEL", "")
        if not self.url:
            raise ConfigError("completion endpoint not configured (set RRPIPE_LLM_URL)")
        self.attempts = attempts
        self.base_delay = base_delay
        self.run_id = run_id or uuid.uuid4().hex[:12]
        self.total_attempts = 0
        self._sem = threading.BoundedSemaphore(max_inflight)
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = sleep
        self._lock = threading.Lock()

    def _post_once(self, request: CompletionRequest) -> str:
        body = {
            "model": request.model_id or self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        with self._lock:
            self.total_attempts += 1
        try:
            with self._sem:
                resp = self._client.post(self.url, json=body, headers=headers)
        except httpx.HTTPError as exc:
            raise TransientLLMError(str(exc)) from exc
        status = resp.status_code
        if status in (401, 403):
            raise AuthenticationError(f"authentication failed (HTTP {status})")
        if status == 429 or status >= 500:
            raise TransientLLMError(f"HTTP {status}")
        if status == 400 and "context" in resp.text.lower():
            raise ContextLengthError(resp.text[:300])
        if status != 200:
            raise LLMError(f"HTTP {status}: {resp.text[:300]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise LLMError(f"malformed completion response: {exc}") from exc

    def complete(self, request: CompletionRequest) -> str:
        start = time.monotonic()
        text, used = call_with_retries(
            lambda: self._post_once(request), self.attempts, self.base_delay, sleep=self._sleep
        )
        logger.info(
            "run=%s digest=%s attempts=%d latency=%.3fs",
            self.run_id, prompt_digest(request.prompt)[:16], used, time.monotonic() - start,
        )
        logger.debug("run=%s prompt=%r response=%r", self.run_id, request.prompt, text)
        return text


class MockLLM:
    """Deterministic offline backend.

    Exactly one of ``responses`` (a queue, consumed in order, erroring when
    exhausted), ``by_digest`` (prompt digest -> response) or ``responder``
    (a function of the prompt) must be given. Every request is appended to
    :attr:`requests`.
    """

    def __init__(
        self,
        responses: Iterable[str] | None = None,
        by_digest: Mapping[str, str] | None = None,
        responder: Callable[[str], str] | None = None,
    ):
        given = [x is not None for x in (responses, by_digest, responder)]
        if sum(given) != 1:
            raise ConfigError("MockLLM needs exactly one of responses, by_digest, responder")
        self._queue = list(responses) if responses is not None else None
        self._digest = dict(by_digest) if by_digest is not None else None
        self._responder = responder
        self.requests: list[CompletionRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_prompts(cls, mapping: Mapping[str, str]) -> "MockLLM":
        return cls(by_digest={prompt_digest(p): r for p, r in mapping.items()})

    @property
    def calls(self) -> int:
        return len(self.requests)

    def complete(self, request: CompletionRequest) -> str:
        with self._lock:
            self.requests.append(request)
            if self._queue is not None:
                if not self._queue:
                    raise MockExhausted(f"mock script exhausted after {len(self.requests) - 1} call(s)")
                return self._queue.pop(0)
        if self._digest is not None:
            digest = prompt_digest(request.prompt)
            if digest not in self._digest:
                raise MockExhausted(f"no scripted response for prompt digest {digest[:16]}")
            return self._digest[digest]
        return self._responder(request.prompt)


class RecordingClient:
    """Wraps a client and appends every exchange to a JSON Lines cassette."""

    def __init__(self, inner: CompletionClient, cassette: str | Path, run_id: str | None = None):
        self.inner = inner
        self.path = Path(cassette)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.run_id = run_id or getattr(inner, "run_id", None) or uuid.uuid4().hex[:12]
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> str:
        start = time.monotonic()
        text = self.inner.complete(request)
        rec = {
            "run_id": self.run_id,
            "digest": prompt_digest(request.prompt),
            "prompt": request.prompt,
            "temperature": request.temperature,
            "response": text,
            "latency": round(time.monotonic() - start, 6),
        }
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        return text


class ReplayClient:
    """Serves responses from a cassette; repeated prompts replay in recorded order."""

    def __init__(self, cassette: str | Path):
        self._by_digest: dict[str, list[str]] = {}
        path = Path(cassette)
        if not path.exists():
            raise ConfigError(f"no such cassette: {path}")
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    self._by_digest.setdefault(rec["digest"], []).append(rec["response"])
        self._served: dict[str, int] = {}
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> str:
        digest = prompt_digest(request.prompt)
        with self._lock:
            if digest not in self._by_digest:
                raise LLMError(f"prompt not found in cassette (digest {digest[:16]})")
            answers = self._by_digest[digest]
            n = self._served.get(digest, 0)
            self._served[digest] = n + 1
            return answers[min(n, len(answers) - 1)]
