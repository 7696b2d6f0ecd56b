"""Transport for chat and embedding calls with retries and an on-disk cache.

Requests use the OpenAI-compatible `/chat/completions` and `/embeddings`
shapes.  Responses are cached verbatim under a content-addressed key, so a
replay never touches the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path

import httpx

log = logging.getLogger(__name__)

TRANSIENT_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


class GatewayError(RuntimeError):
    pass


class NonRetryableError(GatewayError):
    pass


class RetriesExhausted(GatewayError):
    pass


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 5
    base_delay: float = 1.0
    factor: float = 2.0

    def delay(self, attempt: int) -> float:
        """Sleep before retry number `attempt` (1-based)."""
        return self.base_delay * self.factor ** (attempt - 1)


@dataclass(frozen=True)
class LlmRequest:
    role: str  # "chat" | "embed"
    model: str
    payload: str  # JSON request body

    @property
    def cache_key(self) -> str:
        h = hashlib.sha256()
        for part in (self.role, self.model, self.payload):
            h.update(part.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()


@dataclass(frozen=True)
class LlmResponse:
    body: str
    latency: float
    attempts: int


def chat_request(model, system, user, *, temperature=0.0, salt=0) -> LlmRequest:
    body = {
        "model": model,
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ],
        "temperature": temperature,
    }
    if salt:
        # distinguishes re-asks after a bad answer; not sent to the server
        body["_attempt"] = salt
    return LlmRequest("chat", model, json.dumps(body, sort_keys=True, ensure_ascii=False))


def embed_request(model, text) -> LlmRequest:
    body = {"model": model, "input": text}
    return LlmRequest("embed", model, json.dumps(body, sort_keys=True, ensure_ascii=False))


def chat_content(body: str) -> str:
    """Assistant text from a chat-completions response body."""
    doc = json.loads(body)
    return doc["choices"][0]["message"]["content"]


def embedding_values(body: str) -> list[float]:
    doc = json.loads(body)
    return doc["data"][0]["embedding"]


class ResponseCache:
    """Write-once files named by request key."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key):
        return self.root / key[:2] / f"{key}.json"

    def get(self, key) -> str | None:
        p = self._path(key)
        if p.exists():
            return p.read_text(encoding="utf-8")
        return None

    def put(self, key, body: str):
        p = self._path(key)
        if p.exists():
            return
        p.parent.mkdir(parents=True, exist_ok=True)
        tmp = p.with_suffix(f".{os.getpid()}.{threading.get_ident()}.tmp")
        tmp.write_text(body, encoding="utf-8")
        try:
            os.link(tmp, p)  # fails if another writer got there first
        except FileExistsError:
            pass
        finally:
            tmp.unlink()

    def clear(self):
        for p in self.root.glob("*/*.json"):
            p.unlink()


class Gateway:
    def __init__(
        self,
        base_url=None,
        api_key=None,
        cache_dir=".llm-cache",
        *,
        client: httpx.Client | None = None,
        policy: RetryPolicy | None = None,
        timeout=120.0,
        sleep=time.sleep,
    ):
        self.base_url = (base_url or os.environ.get("LLM_BASE_URL") or "").rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get("LLM_API_KEY", "")
        self.cache = ResponseCache(cache_dir)
        self.policy = policy or RetryPolicy()
        self._client = client
        self._timeout = timeout
        self._sleep = sleep
        self.network_calls = 0
        self._lock = threading.Lock()

    @property
    def client(self) -> httpx.Client:
        if self._client is None:
            self._client = httpx.Client(timeout=self._timeout)
        return self._client

    def _endpoint(self, role):
        if not self.base_url:
            raise NonRetryableError("LLM_BASE_URL is not configured")
        return f"{self.base_url}/{'chat/completions' if role == 'chat' else 'embeddings'}"

    def _check_credential(self):
        key = self.api_key
        if key and (key != key.strip() or any(ch.isspace() or not ch.isprintable() for ch in key)):
            raise NonRetryableError("malformed API credential")

    def _send(self, request: LlmRequest) -> httpx.Response:
        body = json.loads(request.payload)
        body.pop("_attempt", None)
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        with self._lock:
            self.network_calls += 1
        return self.client.post(self._endpoint(request.role), json=body, headers=headers)

    def call(self, request: LlmRequest, policy: RetryPolicy | None = None) -> LlmResponse:
        cached = self.cache.get(request.cache_key)
        if cached is not None:
            return LlmResponse(cached, 0.0, 0)
        self._check_credential()
        policy = policy or self.policy
        start = time.monotonic()
        last_error = None
        for attempt in range(1, policy.max_attempts + 1):
            if attempt > 1:
                self._sleep(policy.delay(attempt - 1))
            try:
                resp = self._send(request)
            except httpx.TransportError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                log.warning("transient transport error (attempt %d): %s", attempt, last_error)
                continue
            if resp.status_code in TRANSIENT_STATUS:
                last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
                log.warning("transient status (attempt %d): %s", attempt, last_error)
                continue
            if resp.status_code >= 400:
                raise NonRetryableError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            body = resp.text
            self.cache.put(request.cache_key, body)
            return LlmResponse(body, time.monotonic() - start, attempt)
        raise RetriesExhausted(f"gave up after {policy.max_attempts} attempts: {last_error}")

    def call_batch(self, requests, max_in_flight=8) -> list[LlmResponse]:
        """Issue requests with bounded concurrency; results keep input order.

        On the first failure no new requests are started; requests already
        in flight are allowed to finish (and are cached) before the error
        is re-raised.
        """
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        requests = list(requests)
        results: list[LlmResponse | None] = [None] * len(requests)
        if max_in_flight == 1:
            return [self.call(r) for r in requests]
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            futures = {pool.submit(self.call, r): i for i, r in enumerate(requests)}
            error = None
            for fut in list(futures):
                try:
                    results[futures[fut]] = fut.result()
                except Exception as exc:  # noqa: BLE001 - re-raised below
                    error = exc
                    break
            if error is not None:
                for fut in futures:
                    fut.cancel()
                wait(list(futures))
                raise error
        return results

    def close(self):
        if self._client is not None:
            self._client.close()
