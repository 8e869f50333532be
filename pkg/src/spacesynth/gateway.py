"""Provider-agnostic gateway for text generation and embeddings.

One ``Gateway`` fronts a transport (OpenAI-compatible HTTP or an in-process
mock), adds bounded concurrency, retry with backoff, structured-output
extraction with a single corrective reprompt, and an auditable transcript.
The rest of the pipeline never touches a transport directly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
import requests

from .errors import (
    EmptyInputError,
    MalformedReplyError,
    ProviderError,
    ProviderTimeoutError,
    RateLimitedError,
    SchemaViolationError,
)
from .structured import corrective_suffix, extract_structured

logger = logging.getLogger(__name__)


class RequestKind(str, Enum):
    GENERATE = "generate"
    EMBED = "embed"


@dataclass(frozen=True)
class ProviderRequest:
    """One generation or embedding exchange, provider-agnostic.

    ``purpose`` is bookkeeping only (it labels transcript entries so call
    budgets can be audited per pipeline stage); transports never send it.
    """

    kind: RequestKind
    prompt: str | None = None
    inputs: tuple[str, ...] | None = None
    temperature: float = 0.0
    max_output_tokens: int = 2048
    idempotency_key: str = ""
    purpose: str = ""

    def __post_init__(self):
        if self.kind is RequestKind.GENERATE:
            if not self.prompt or self.inputs is not None:
                raise ValueError("generate requests carry exactly one prompt")
        else:
            if not self.inputs or self.prompt is not None:
                raise ValueError("embed requests carry at least one input")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")


@dataclass
class ProviderReply:
    text: str | None = None
    vectors: np.ndarray | None = None
    usage: dict[str, int] = field(default_factory=dict)
    latency_s: float = 0.0


class TransportFailure(Exception):
    """Raised by transports; the gateway decides whether to retry."""

    def __init__(self, message: str, *, retryable: bool, status: int | None = None,
                 kind: str = "error"):
        super().__init__(message)
        self.retryable = retryable
        self.status = status
        self.kind = kind  # "rate_limited" | "timeout" | "server" | "client"


class Transport:
    """Interface: turn one ProviderRequest into one ProviderReply."""

    def send(self, request: ProviderRequest) -> ProviderReply:
        raise NotImplementedError


@dataclass(frozen=True)
class RetryPolicy:
    """Exponential backoff with equal jitter.

    The jitter keeps half of each step deterministic so realized delays stay
    non-decreasing across attempts while still decorrelating clients.
    """

    retry_limit: int = 2
    base_delay_s: float = 0.5
    factor: float = 2.0
    max_delay_s: float = 30.0
    jitter: bool = True

    def delay_for_attempt(self, attempt: int, rng: random.Random) -> float:
        """Delay slept after failed attempt ``attempt`` (1-based)."""
        step = min(self.base_delay_s * self.factor ** (attempt - 1), self.max_delay_s)
        if not self.jitter:
            return step
        return step / 2 + rng.uniform(0, step / 2)


def _idempotency_key(kind: RequestKind, payload: str, temperature: float) -> str:
    digest = hashlib.sha256(
        f"{kind.value}\x00{temperature!r}\x00{payload}".encode("utf-8")
    ).hexdigest()
    return digest[:24]


class Gateway:
    """Shared, thread-safe front door to one provider."""

    def __init__(
        self,
        transport: Transport,
        *,
        retry: RetryPolicy | None = None,
        max_inflight: int = 8,
        generate_model: str = "",
        embedding_model: str = "",
        transcript_path: str | None = None,
        rng: random.Random | None = None,
    ):
        self.transport = transport
        self.retry = retry or RetryPolicy()
        self.generate_model = generate_model
        self.embedding_model = embedding_model
        self._limiter = threading.BoundedSemaphore(max_inflight)
        self._lock = threading.Lock()
        self._rng = rng or random.Random()
        self._transcript_path = transcript_path
        self.transcript: list[dict[str, Any]] = []
        self.usage: dict[str, int] = {
            "generate_calls": 0,
            "embed_calls": 0,
            "prompt_tokens": 0,
            "completion_tokens": 0,
        }

    # -- core calls -----------------------------------------------------------

    def generate(
        self,
        prompt: str,
        *,
        temperature: float = 0.0,
        max_output_tokens: int = 2048,
        purpose: str = "",
        request_id: str = "",
        corrective: bool = False,
    ) -> ProviderReply:
        request = ProviderRequest(
            kind=RequestKind.GENERATE,
            prompt=prompt,
            temperature=temperature,
            max_output_tokens=max_output_tokens,
            idempotency_key=_idempotency_key(RequestKind.GENERATE, prompt, temperature),
            purpose=purpose,
        )
        return self._send_with_retry(request, request_id=request_id, corrective=corrective)

    def embed(self, texts: list[str], *, purpose: str = "", request_id: str = "") -> np.ndarray:
        """One vector per input text, order preserved."""
        if not texts:
            raise EmptyInputError("embed() requires at least one input text")
        request = ProviderRequest(
            kind=RequestKind.EMBED,
            inputs=tuple(texts),
            idempotency_key=_idempotency_key(
                RequestKind.EMBED, "\x00".join(texts), 0.0
            ),
            purpose=purpose,
        )
        reply = self._send_with_retry(request, request_id=request_id)
        vectors = reply.vectors
        if vectors is None or len(vectors) != len(texts):
            raise ProviderError(
                f"expected {len(texts)} embedding vectors, got "
                f"{0 if vectors is None else len(vectors)}"
            )
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[1] < 1:
            raise ProviderError("embedding vectors must share one dimensionality > 0")
        return vectors

    def generate_structured(
        self,
        prompt: str,
        schema_id: str,
        *,
        temperature: float = 0.0,
        max_output_tokens: int = 2048,
        purpose: str = "",
        request_id: str = "",
    ) -> dict:
        """Generate and extract a schema-checked payload.

        An unusable reply (unparseable, or schema-violating) gets exactly one
        corrective reprompt with the parse error appended before the failure
        propagates.
        """
        reply = self.generate(
            prompt,
            temperature=temperature,
            max_output_tokens=max_output_tokens,
            purpose=purpose,
            request_id=request_id,
        )
        try:
            return extract_structured(reply.text or "", schema_id)
        except (MalformedReplyError, SchemaViolationError) as exc:
            logger.debug("reprompting %s after unusable reply: %s", purpose or schema_id, exc)
            retry_reply = self.generate(
                prompt + corrective_suffix(exc),
                temperature=temperature,
                max_output_tokens=max_output_tokens,
                purpose=purpose,
                request_id=f"{request_id}+fix" if request_id else "",
                corrective=True,
            )
            return extract_structured(retry_reply.text or "", schema_id)

    # -- plumbing -------------------------------------------------------------

    def _send_with_retry(
        self, request: ProviderRequest, *, request_id: str = "", corrective: bool = False
    ) -> ProviderReply:
        attempts = 0
        last: TransportFailure | None = None
        while attempts <= self.retry.retry_limit:
            attempts += 1
            try:
                with self._limiter:
                    start = time.monotonic()
                    reply = self.transport.send(request)
                    reply.latency_s = time.monotonic() - start
            except TransportFailure as failure:
                last = failure
                if not failure.retryable or attempts > self.retry.retry_limit:
                    break
                delay = self.retry.delay_for_attempt(attempts, self._rng)
                logger.warning(
                    "attempt %d/%d for %s failed (%s); retrying in %.2fs",
                    attempts, self.retry.retry_limit + 1,
                    request.purpose or request.kind.value, failure, delay,
                )
                time.sleep(delay)
                continue
            self._record(request, request_id, attempts, reply=reply, corrective=corrective)
            return reply

        self._record(request, request_id, attempts, error=last, corrective=corrective)
        message = f"{request.purpose or request.kind.value}: {last}"
        if last is not None and last.kind == "rate_limited":
            raise RateLimitedError(f"rate limited after {attempts} attempts: {message}")
        if last is not None and last.kind == "timeout":
            raise ProviderTimeoutError(f"timed out after {attempts} attempts: {message}")
        status = last.status if last is not None else None
        raise ProviderError(f"provider failure after {attempts} attempts: {message}", status)

    def _record(
        self,
        request: ProviderRequest,
        request_id: str,
        attempts: int,
        *,
        reply: ProviderReply | None = None,
        error: Exception | None = None,
        corrective: bool = False,
    ) -> None:
        if request.kind is RequestKind.GENERATE:
            content: Any = request.prompt
            response: Any = reply.text if reply else None
        else:
            content = list(request.inputs or ())
            response = None if reply is None or reply.vectors is None else [
                [float(x) for x in vec] for vec in np.asarray(reply.vectors)
            ]
        entry = {
            "request_id": request_id,
            "kind": request.kind.value,
            "purpose": request.purpose,
            "corrective": corrective,
            "attempts": attempts,
            "temperature": request.temperature,
            "idempotency_key": request.idempotency_key,
            "request": content,
            "response": response,
            "ok": error is None,
            "error": str(error) if error is not None else None,
        }
        with self._lock:
            self.transcript.append(entry)
            if reply is not None:
                if request.kind is RequestKind.GENERATE:
                    self.usage["generate_calls"] += 1
                else:
                    self.usage["embed_calls"] += 1
                self.usage["prompt_tokens"] += reply.usage.get("prompt_tokens", 0)
                self.usage["completion_tokens"] += reply.usage.get("completion_tokens", 0)
            if self._transcript_path:
                with open(self._transcript_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def calls(self, purpose: str | None = None, *, kind: str | None = None) -> list[dict]:
        """Transcript slice, for audits and call-budget assertions."""
        with self._lock:
            entries = list(self.transcript)
        if purpose is not None:
            entries = [e for e in entries if e["purpose"] == purpose]
        if kind is not None:
            entries = [e for e in entries if e["kind"] == kind]
        return entries


class OpenAIHttpTransport(Transport):
    """OpenAI-compatible chat-completions and embeddings endpoints.

    Covers most hosted and local providers (vLLM, llama.cpp server, ...).
    The bearer token is read from an environment variable at send time so
    credentials never live in config files.
    """

    def __init__(
        self,
        base_url: str,
        *,
        generate_model: str,
        embedding_model: str = "",
        api_key_env: str = "OPENAI_API_KEY",
        timeout_s: float = 120.0,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.generate_model = generate_model
        self.embedding_model = embedding_model
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self._session = session or requests.Session()

    def chat_payload(self, request: ProviderRequest) -> dict:
        return {
            "model": self.generate_model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }

    def embeddings_payload(self, request: ProviderRequest) -> dict:
        return {"model": self.embedding_model, "input": list(request.inputs or ())}

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def send(self, request: ProviderRequest) -> ProviderReply:
        if request.kind is RequestKind.GENERATE:
            url = f"{self.base_url}/chat/completions"
            payload = self.chat_payload(request)
        else:
            url = f"{self.base_url}/embeddings"
            payload = self.embeddings_payload(request)
        try:
            response = self._session.post(
                url, json=payload, headers=self._headers(), timeout=self.timeout_s
            )
        except requests.Timeout as exc:
            raise TransportFailure(str(exc), retryable=True, kind="timeout") from exc
        except requests.RequestException as exc:
            raise TransportFailure(str(exc), retryable=True, kind="server") from exc

        if response.status_code == 429:
            raise TransportFailure(
                "429 rate limited", retryable=True, status=429, kind="rate_limited"
            )
        if response.status_code >= 500:
            raise TransportFailure(
                f"{response.status_code} server error",
                retryable=True, status=response.status_code, kind="server",
            )
        if response.status_code >= 400:
            raise TransportFailure(
                f"{response.status_code} {response.text[:200]}",
                retryable=False, status=response.status_code, kind="client",
            )

        body = response.json()
        usage = {
            k: int(v)
            for k, v in (body.get("usage") or {}).items()
            if isinstance(v, (int, float))
        }
        if request.kind is RequestKind.GENERATE:
            try:
                text = body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise TransportFailure(
                    f"unexpected completion payload: {exc}", retryable=False, kind="client"
                ) from exc
            return ProviderReply(text=text, usage=usage)
        try:
            vectors = np.asarray(
                [item["embedding"] for item in body["data"]], dtype=np.float64
            )
        except (KeyError, TypeError) as exc:
            raise TransportFailure(
                f"unexpected embeddings payload: {exc}", retryable=False, kind="client"
            ) from exc
        return ProviderReply(vectors=vectors, usage=usage)


__all__ = [
    "RequestKind",
    "ProviderRequest",
    "ProviderReply",
    "TransportFailure",
    "Transport",
    "RetryPolicy",
    "Gateway",
    "OpenAIHttpTransport",
]
