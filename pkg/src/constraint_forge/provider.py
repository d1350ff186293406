"""Chat-completion providers with caching, retries and bounded concurrency."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import httpx

logger = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "CONSTRAINT_FORGE_API_KEY"
DEFAULT_MODEL = "gpt-4o"
DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_TOKENS = 2048


class ProviderError(Exception):
    """Base class for provider failures."""


class TransportError(ProviderError):
    """Upstream could not be reached, or kept failing, after all retries."""


class AuthenticationError(ProviderError):
    pass


class RateLimitError(ProviderError):
    pass


class EmptyCompletionError(ProviderError):
    pass


class NoScriptedResponse(ProviderError):
    """A scripted provider was asked for something it has no answer for."""


@dataclass(frozen=True)
class ChatRequest:
    user_text: str
    system_text: str = ""
    model_id: str = DEFAULT_MODEL
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self) -> None:
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    provider_id: str
    cached: bool = False


@dataclass
class ProviderConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    api_key_env_name: str = DEFAULT_API_KEY_ENV
    max_concurrency: int = 8
    max_retries: int = 3
    cache_dir: str | None = None
    timeout: float = 120.0

    def __post_init__(self) -> None:
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def cache_key(request: ChatRequest) -> str:
    """Hex digest identifying a request. Text fields are hashed byte-exact."""
    payload = json.dumps(
        [
            request.model_id,
            request.system_text,
            request.user_text,
            repr(float(request.temperature)),
            int(request.max_tokens),
        ],
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed response store; one ``<digest>.txt`` file per request
    when a directory is given, in-memory otherwise."""

    def __init__(self, directory: str | os.PathLike | None = None):
        self.directory = Path(directory) if directory is not None else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
        self._memory: dict[str, str] = {}
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        assert self.directory is not None
        return self.directory / f"{key}.txt"

    def get(self, key: str) -> str | None:
        with self._lock:
            if key in self._memory:
                return self._memory[key]
        if self.directory is None:
            return None
        path = self._path(key)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            return None
        with self._lock:
            self._memory[key] = text
        return text

    def put(self, key: str, text: str) -> None:
        with self._lock:
            self._memory[key] = text
        if self.directory is None:
            return
        path = self._path(key)
        tmp = path.with_name(f"{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)


class Provider:
    """Shared request path: cache lookup, single-flight per key, concurrency
    gate, retries. Subclasses implement :meth:`_send`."""

    provider_id = "base"
    retryable: tuple[type[Exception], ...] = (TransportError, RateLimitError)

    def __init__(
        self,
        *,
        max_concurrency: int = 8,
        max_retries: int = 3,
        cache: ResponseCache | None = None,
        backoff_base: float = 0.5,
        backoff_cap: float = 30.0,
        sleep: Callable[[float], None] = time.sleep,
        jitter_seed: int | None = None,
    ):
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        self.max_concurrency = max_concurrency
        self.max_retries = max_retries
        self.cache = cache
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self._sleep = sleep
        self._jitter = random.Random(jitter_seed)
        self._gate = threading.BoundedSemaphore(max_concurrency)
        self._key_locks: dict[str, threading.Lock] = {}
        self._key_locks_guard = threading.Lock()
        self.upstream_calls = 0
        self._count_lock = threading.Lock()

    def complete(self, request: ChatRequest, *, refresh: bool = False) -> ChatResponse:
        """Return the completion for ``request``.

        With ``refresh=True`` the cache is not read but the fresh answer is
        still written through, replacing any stored response.
        """
        if self.cache is None:
            return ChatResponse(self._call_upstream(request), self.provider_id, False)

        key = cache_key(request)
        with self._lock_for(key):
            if not refresh:
                hit = self.cache.get(key)
                if hit is not None:
                    return ChatResponse(hit, self.provider_id, True)
            text = self._call_upstream(request)
            self.cache.put(key, text)
            return ChatResponse(text, self.provider_id, False)

    def _lock_for(self, key: str) -> threading.Lock:
        with self._key_locks_guard:
            lock = self._key_locks.get(key)
            if lock is None:
                lock = self._key_locks[key] = threading.Lock()
            return lock

    def _call_upstream(self, request: ChatRequest) -> str:
        attempt = 0
        while True:
            try:
                with self._gate:
                    with self._count_lock:
                        self.upstream_calls += 1
                    text = self._send(request)
            except self.retryable as exc:
                if attempt >= self.max_retries:
                    raise
                delay = self._backoff(attempt, getattr(exc, "retry_after", None))
                logger.warning(
                    "%s attempt %d/%d failed (%s); retrying in %.2fs",
                    self.provider_id, attempt + 1, self.max_retries + 1, exc, delay,
                )
                self._sleep(delay)
                attempt += 1
                continue
            if not text or not text.strip():
                raise EmptyCompletionError(f"{self.provider_id} returned an empty completion")
            return text

    def _backoff(self, attempt: int, retry_after: float | None) -> float:
        delay = min(self.backoff_cap, self.backoff_base * (2**attempt))
        delay += self._jitter.uniform(0, delay)
        if retry_after is not None:
            delay = max(delay, float(retry_after))
        return delay

    def _send(self, request: ChatRequest) -> str:
        raise NotImplementedError


Responder = Callable[[ChatRequest], "str | None"]


class ScriptedProvider(Provider):
    """Deterministic mock. Looks the request's ``user_text`` up in ``table``,
    then asks ``responder``; anything still unanswered is an error.

    Table values that are exceptions are raised instead of returned, which
    lets tests script failures at a given prompt.
    """

    provider_id = "scripted"

    def __init__(
        self,
        table: Mapping[str, str | BaseException] | None = None,
        responder: Responder | None = None,
        *,
        latency: float = 0.0,
        **kwargs,
    ):
        kwargs.setdefault("sleep", lambda _s: None)
        super().__init__(**kwargs)
        self.table = dict(table or {})
        self.responder = responder
        self.latency = latency
        self.requests: list[ChatRequest] = []
        self.in_flight = 0
        self.max_in_flight = 0
        self._flight_lock = threading.Lock()

    def _send(self, request: ChatRequest) -> str:
        with self._flight_lock:
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
            self.requests.append(request)
        try:
            if self.latency:
                time.sleep(self.latency)
            return self._lookup(request)
        finally:
            with self._flight_lock:
                self.in_flight -= 1

    def _lookup(self, request: ChatRequest) -> str:
        if request.user_text in self.table:
            value = self.table[request.user_text]
            if isinstance(value, BaseException):
                raise value
            return value
        if self.responder is not None:
            text = self.responder(request)
            if text is not None:
                return text
        preview = request.user_text[:60].replace("\n", " ")
        raise NoScriptedResponse(f"no scripted response for {preview!r}")


class HTTPProvider(Provider):
    """OpenAI-compatible ``/chat/completions`` client."""

    provider_id = "http"

    def __init__(
        self,
        config: ProviderConfig,
        *,
        client: httpx.Client | None = None,
        api_key: str | None = None,
        **kwargs,
    ):
        cache = kwargs.pop("cache", None)
        if cache is None and config.cache_dir:
            cache = ResponseCache(config.cache_dir)
        kwargs.setdefault("max_concurrency", config.max_concurrency)
        kwargs.setdefault("max_retries", config.max_retries)
        super().__init__(cache=cache, **kwargs)
        self.config = config
        if api_key is None:
            api_key = os.environ.get(config.api_key_env_name, "").strip()
        if not api_key:
            raise AuthenticationError(
                f"missing API key: environment variable {config.api_key_env_name} is not set"
            )
        self._api_key = api_key
        self._client = client or httpx.Client(timeout=config.timeout)

    def _send(self, request: ChatRequest) -> str:
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": request.user_text})
        body = {
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        try:
            resp = self._client.post(
                self.config.endpoint,
                json=body,
                headers={"Authorization": f"Bearer {self._api_key}"},
            )
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc

        if resp.status_code in (401, 403):
            raise AuthenticationError(f"upstream rejected credentials ({resp.status_code})")
        if resp.status_code == 429:
            err = RateLimitError("upstream rate limit (429)")
            err.retry_after = _parse_retry_after(resp.headers.get("retry-after"))
            raise err
        if resp.status_code >= 500:
            raise TransportError(f"upstream error {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderError(f"upstream refused request ({resp.status_code}): {resp.text[:200]}")
        try:
            data = resp.json()
            content = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc
        return content or ""


def _parse_retry_after(value: str | None) -> float | None:
    if value is None:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None
