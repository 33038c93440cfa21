"""Shared HTTP plumbing: per-host rate limiting and bounded retries."""

from __future__ import annotations

import logging
import threading
import time

import requests

logger = logging.getLogger(__name__)

DEFAULT_RETRIES = 5
DEFAULT_TIMEOUT = 30


class RemoteUnavailable(Exception):
    """Remote endpoint could not be reached within the retry budget."""


class RateLimited(Exception):
    """Remote signalled rate limiting and the retry budget ran out."""


class RateLimiter:
    """Minimum-interval limiter, shared across threads, keyed by host."""

    def __init__(self, requests_per_second: float = 2.0):
        self.interval = 1.0 / requests_per_second if requests_per_second > 0 else 0.0
        self._lock = threading.Lock()
        self._last: dict[str, float] = {}

    def wait(self, key: str) -> None:
        if self.interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            ready = self._last.get(key, 0.0) + self.interval
            delay = max(0.0, ready - now)
            self._last[key] = max(now, ready)
        if delay > 0:
            time.sleep(delay)


def get_with_retries(
    url: str,
    headers: dict | None = None,
    params: dict | None = None,
    limiter: RateLimiter | None = None,
    retries: int = DEFAULT_RETRIES,
    backoff: float = 1.0,
    timeout: float = DEFAULT_TIMEOUT,
    session: requests.Session | None = None,
) -> requests.Response:
    """GET with exponential back-off; raises RateLimited / RemoteUnavailable."""
    host = url.split("/")[2] if "://" in url else url
    last_error: Exception | None = None
    for attempt in range(retries):
        if limiter is not None:
            limiter.wait(host)
        try:
            getter = session.get if session is not None else requests.get
            resp = getter(url, headers=headers, params=params, timeout=timeout)
        except requests.RequestException as exc:
            last_error = exc
            logger.warning("request to %s failed (%s), attempt %d", url, exc, attempt + 1)
            time.sleep(backoff * (2**attempt))
            continue
        if resp.status_code == 429 or resp.status_code == 403 and "rate" in resp.text.lower():
            last_error = RateLimited(f"{url}: HTTP {resp.status_code}")
            retry_after = resp.headers.get("Retry-After")
            delay = float(retry_after) if retry_after and retry_after.isdigit() else backoff * (2**attempt)
            logger.warning("rate limited on %s, backing off %.1fs", host, delay)
            time.sleep(delay)
            continue
        if resp.status_code >= 500:
            last_error = RemoteUnavailable(f"{url}: HTTP {resp.status_code}")
            time.sleep(backoff * (2**attempt))
            continue
        return resp
    if isinstance(last_error, RateLimited):
        raise last_error
    raise RemoteUnavailable(f"{url}: retries exhausted ({last_error})")
