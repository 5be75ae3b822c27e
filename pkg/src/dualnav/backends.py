"""Text-completion backends shared by reflection and instruction conversion."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from typing import Protocol

import requests

log = logging.getLogger(__name__)

BACKEND_URL_ENV = "DUALNAV_BACKEND_URL"
DEFAULT_MODEL = "dualnav-reflector"
DEFAULT_TIMEOUT = 30.0
DEFAULT_RETRIES = 2
DEFAULT_MAX_IN_FLIGHT = 4


class BackendError(RuntimeError):
    """The backend failed to produce a completion."""


class CompletionBackend(Protocol):
    def complete(self, prompt: str) -> str:
        """Return the completion text for a prompt."""
        ...


class CountingBackend:
    """Wraps a backend and counts invocations; used for cost accounting."""

    def __init__(self, inner: CompletionBackend):
        self.inner = inner
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        with self._lock:
            self.calls += 1
        return self.inner.complete(prompt)


class RemoteLLM:
    """HTTP completion client: POST {model, prompt, max_tokens} as JSON.

    The response must be a JSON object carrying the completion under
    ``completion``.  Failed requests are retried; concurrent use is bounded
    by a semaphore so a large evaluation cannot stampede the endpoint.
    """

    def __init__(
        self,
        url: str | None = None,
        model: str = DEFAULT_MODEL,
        max_tokens: int = 512,
        timeout: float = DEFAULT_TIMEOUT,
        retries: int = DEFAULT_RETRIES,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        retry_wait: float = 0.5,
    ):
        resolved = url or os.environ.get(BACKEND_URL_ENV)
        if not resolved:
            raise BackendError(
                f"no backend url: pass url= or set {BACKEND_URL_ENV}"
            )
        self.url = resolved
        self.model = model
        self.max_tokens = max_tokens
        self.timeout = timeout
        self.retries = retries
        self.retry_wait = retry_wait
        self._gate = threading.Semaphore(max_in_flight)
        self._session = requests.Session()

    def complete(self, prompt: str) -> str:
        payload = {"model": self.model, "prompt": prompt, "max_tokens": self.max_tokens}
        last_error: Exception | None = None
        with self._gate:
            for attempt in range(self.retries + 1):
                try:
                    resp = self._session.post(self.url, json=payload, timeout=self.timeout)
                    resp.raise_for_status()
                    body = resp.json()
                    text = body.get("completion")
                    if not isinstance(text, str):
                        raise BackendError("response JSON has no string 'completion' field")
                    return text
                except BackendError:
                    raise
                except (requests.RequestException, json.JSONDecodeError) as exc:
                    last_error = exc
                    if attempt < self.retries:
                        log.warning("backend request failed (attempt %d): %s", attempt + 1, exc)
                        time.sleep(self.retry_wait * (attempt + 1))
        raise BackendError(f"backend unreachable after {self.retries + 1} attempts: {last_error}")


__all__ = [
    "BACKEND_URL_ENV",
    "BackendError",
    "CompletionBackend",
    "CountingBackend",
    "RemoteLLM",
]
