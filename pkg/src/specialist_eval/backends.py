"""Pluggable evaluator backends with caching, retries, and bounded
concurrency.

Three backends ship with the package: a generic chat-completions HTTP
client, a replay backend that serves responses recorded by earlier runs,
and the deterministic parrot oracle that copies matching ICL error spans.
The last two never touch the network, which keeps full pipeline runs
reproducible byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import httpx

from .core import PromptBundle
from .errors import (
    BackendCallError,
    BackendError,
    TransientBackendError,
)
from .prompting import RenderedPrompt

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecodingParams:
    """Greedy decoding by default; the methods here want determinism."""

    temperature: float = 0.0
    max_tokens: int = 8192


@dataclass(frozen=True)
class EvalRequest:
    """A rendered prompt plus the bundle it came from. Deterministic
    backends (parrot) read the bundle; network backends read the prompt."""

    prompt: RenderedPrompt
    bundle: PromptBundle | None = None


@runtime_checkable
class EvaluatorBackend(Protocol):
    identity: str
    params: DecodingParams

    def evaluate(self, request: EvalRequest) -> str: ...


def cache_key(identity: str, prompt: RenderedPrompt, params: DecodingParams) -> str:
    """Collision-resistant digest over the exact request content; stable
    across runs and platforms."""
    payload = json.dumps(
        {
            "identity": identity,
            "system": prompt.system_message,
            "user": prompt.user_message,
            "params": {
                "temperature": params.temperature,
                "max_tokens": params.max_tokens,
            },
        },
        ensure_ascii=False,
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CacheEntry:
    key: str
    value: str
    created_at: float


class DiskCache:
    """Content-addressed response store; entries are immutable files."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.txt"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        if not path.exists():
            return None
        return path.read_text(encoding="utf-8")

    def entry(self, key: str) -> CacheEntry | None:
        path = self._path(key)
        if not path.exists():
            return None
        return CacheEntry(
            key=key,
            value=path.read_text(encoding="utf-8"),
            created_at=path.stat().st_mtime,
        )

    def put(self, key: str, value: str) -> None:
        path = self._path(key)
        if path.exists():
            return
        tmp = path.with_suffix(f".tmp.{os.getpid()}")
        tmp.write_text(value, encoding="utf-8")
        os.replace(tmp, path)


@dataclass(frozen=True)
class RetryPolicy:
    """Exponential backoff with jitter; only transient failures retry."""

    attempts: int = 5
    base_delay: float = 0.5
    factor: float = 2.0
    max_delay: float = 30.0


# --- backends ---------------------------------------------------------------


def parrot_response(bundle: PromptBundle) -> str:
    """The copy oracle: predict every ICL error whose span occurs verbatim
    in the test translation, de-duplicated by (span, severity, category),
    in ICL order then error order."""
    seen: set[tuple[str, str, str]] = set()
    predictions = []
    for entry in bundle.icl:
        for error in entry.errors:
            key = (error.span_text, error.severity.value, error.category.render())
            if key in seen or error.span_text not in bundle.test.target:
                continue
            seen.add(key)
            predictions.append(
                {
                    "span": error.span_text,
                    "severity": error.severity.value,
                    "category": error.category.render(),
                }
            )
    return json.dumps(predictions, ensure_ascii=False)


class ParrotBackend:
    identity = "parrot"

    def __init__(self, params: DecodingParams = DecodingParams()):
        self.params = params

    def evaluate(self, request: EvalRequest) -> str:
        if request.bundle is None:
            raise BackendCallError("parrot backend needs the prompt bundle")
        return parrot_response(request.bundle)


class ReplayBackend:
    """Serve responses recorded by a previous run from a cache directory.

    The identity must match the backend that produced the recording, or no
    key will resolve.
    """

    def __init__(
        self,
        directory: str | Path,
        identity: str,
        params: DecodingParams = DecodingParams(),
    ):
        self.store = DiskCache(directory)
        self.identity = identity
        self.params = params

    def evaluate(self, request: EvalRequest) -> str:
        key = cache_key(self.identity, request.prompt, self.params)
        value = self.store.get(key)
        if value is None:
            raise BackendCallError(f"no recorded response for key {key}")
        return value


class HttpBackend:
    """Generic chat-completions client: POST {base_url}/chat/completions
    with a bearer token read from the named environment variable."""

    def __init__(
        self,
        base_url: str,
        model: str,
        token_env: str | None = None,
        params: DecodingParams = DecodingParams(),
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.token_env = token_env
        self.params = params
        self.identity = f"http:{model}"
        headers = {}
        if token_env:
            token = os.environ.get(token_env)
            if not token:
                raise BackendCallError(f"environment variable {token_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(
            headers=headers, timeout=timeout, transport=transport
        )

    def evaluate(self, request: EvalRequest) -> str:
        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.prompt.system_message},
                {"role": "user", "content": request.prompt.user_message},
            ],
            "temperature": self.params.temperature,
            "max_tokens": self.params.max_tokens,
        }
        try:
            response = self._client.post(f"{self.base_url}/chat/completions", json=body)
        except httpx.TransportError as exc:
            raise TransientBackendError(f"transport failure: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientBackendError(f"HTTP {response.status_code}")
        if response.status_code >= 400:
            raise BackendCallError(f"HTTP {response.status_code}: {response.text[:200]}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise BackendCallError(f"malformed completion payload: {exc!r}") from exc


# --- batch evaluation --------------------------------------------------------


@dataclass
class BatchStats:
    cache_hits: int = 0
    calls: int = 0
    retries: int = 0


def evaluate_batch(
    requests: Sequence[EvalRequest],
    backend: EvaluatorBackend,
    max_in_flight: int = 4,
    cache: DiskCache | None = None,
    retry: RetryPolicy = RetryPolicy(),
    stats: BatchStats | None = None,
) -> list[str]:
    """Evaluate prompts with bounded concurrency, returning results in input
    order. The cache is consulted before dispatch and populated after;
    identical prompts are dispatched once. If any prompt exhausts its
    retries, every other prompt still completes and the raised error carries
    the partial results."""
    if max_in_flight < 1:
        raise BackendCallError(f"max_in_flight must be >= 1, got {max_in_flight}")
    stats = stats if stats is not None else BatchStats()

    results: list[str | None] = [None] * len(requests)
    keys = [cache_key(backend.identity, r.prompt, backend.params) for r in requests]

    pending: dict[str, list[int]] = {}
    for index, key in enumerate(keys):
        if cache is not None:
            hit = cache.get(key)
            if hit is not None:
                results[index] = hit
                stats.cache_hits += 1
                continue
        pending.setdefault(key, []).append(index)

    def call_with_retries(request: EvalRequest) -> str:
        rng = random.Random()
        for attempt in range(retry.attempts):
            try:
                stats.calls += 1
                return backend.evaluate(request)
            except TransientBackendError:
                if attempt + 1 >= retry.attempts:
                    raise
                stats.retries += 1
                delay = min(retry.max_delay, retry.base_delay * retry.factor**attempt)
                time.sleep(delay * (0.5 + 0.5 * rng.random()))
        raise AssertionError("unreachable")

    failures: list[tuple[int, str]] = []
    if pending:
        ordered = sorted(pending.items(), key=lambda kv: kv[1][0])
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            futures = {
                key: pool.submit(call_with_retries, requests[indices[0]])
                for key, indices in ordered
            }
        for key, indices in ordered:
            try:
                value = futures[key].result()
            except Exception as exc:  # noqa: BLE001 - reported per prompt index
                message = f"{type(exc).__name__}: {exc}"
                failures.extend((index, message) for index in indices)
                continue
            if cache is not None:
                cache.put(key, value)
            for index in indices:
                results[index] = value

    if failures:
        failures.sort()
        raise BackendError(
            index=failures[0][0],
            failures=tuple(failures),
            partial=tuple(results),
        )
    out = []
    for value in results:
        assert value is not None  # no failures implies every slot is filled
        out.append(value)
    return out
