"""Text-analysis and embedding provider abstractions.

A TextAnalysisProvider takes an instruction plus a document and returns raw
text output. Two implementations ship: an HTTP client for a chat-completions
style endpoint, and a deterministic rule engine that answers every task kind
from the shipped lexicons (used as the offline fallback and in tests).

EmbeddingProvider maps text to fixed-dimension vectors; the deterministic
implementation is a hashed bag-of-words vectorizer, so identical text always
embeds to identical vectors with no model download.
"""

from __future__ import annotations

import json
import logging
import os
from abc import ABC, abstractmethod
from functools import lru_cache
from importlib.resources import files

import numpy as np
from sklearn.feature_extraction.text import HashingVectorizer

from mcp_scope import net

logger = logging.getLogger(__name__)


class ProviderError(Exception):
    """Provider unavailable or returned an unusable response."""


@lru_cache(maxsize=None)
def load_prompt(name: str) -> str:
    return files("mcp_scope").joinpath("assets", "prompts", f"{name}.txt").read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def load_lexicon(name: str) -> dict:
    raw = files("mcp_scope").joinpath("assets", "lexicons", f"{name}.json").read_text(encoding="utf-8")
    return json.loads(raw)


@lru_cache(maxsize=None)
def load_asset_json(name: str) -> dict:
    raw = files("mcp_scope").joinpath("assets", f"{name}.json").read_text(encoding="utf-8")
    return json.loads(raw)


class TextAnalysisProvider(ABC):
    """Request/response contract: instruction + document -> structured text."""

    name: str = "provider"
    deterministic: bool = False

    @abstractmethod
    def complete(self, task: str, instruction: str, document: str = "") -> str:
        """Return raw text output for a task kind; raises ProviderError."""


class HttpTextAnalysisProvider(TextAnalysisProvider):
    """Chat-completions style JSON endpoint.

    Request: {"model": ..., "messages": [{"role": "user", "content": ...}]}
    Response: {"choices": [{"message": {"content": ...}}]}
    The API key is read from the environment variable named in config.
    """

    def __init__(self, endpoint: str, model: str, api_key_env: str = "MCP_SCOPE_API_KEY",
                 limiter: net.RateLimiter | None = None, timeout: float = 120.0):
        self.name = f"http:{model}"
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.limiter = limiter or net.RateLimiter(requests_per_second=1.0)
        self.timeout = timeout

    def complete(self, task: str, instruction: str, document: str = "") -> str:
        import requests

        key = os.environ.get(self.api_key_env)
        if not key:
            raise ProviderError(f"missing API key in ${self.api_key_env}")
        content = instruction if not document else f"{instruction}\n\n{document}"
        host = self.endpoint.split("/")[2] if "://" in self.endpoint else self.endpoint
        self.limiter.wait(host)
        try:
            resp = requests.post(
                self.endpoint,
                json={"model": self.model, "messages": [{"role": "user", "content": content}]},
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise ProviderError(f"provider unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderError(f"provider HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"malformed provider response: {exc}") from exc


class RuleBasedTextProvider(TextAnalysisProvider):
    """Deterministic rule engine answering every provider task offline.

    Returns the same wire shapes a remote model would, so the calling code
    exercises one parsing path for both implementations.
    """

    name = "rules"
    deterministic = True

    def __init__(self, embedder: "EmbeddingProvider | None" = None):
        self.embedder = embedder or HashingEmbedder()

    def complete(self, task: str, instruction: str, document: str = "") -> str:
        # local imports: the rule logic lives next to each pipeline stage
        if task == "readme_extraction":
            from mcp_scope import extract

            result = extract.fallback_extract_text(document)
            return json.dumps(result.to_dict(), sort_keys=True)
        if task == "direct_impact":
            from mcp_scope import classify

            code = classify.keyword_direct_impact(document)
            return code if code is not None else "None"
        if task == "server_labels":
            from mcp_scope import classify

            return json.dumps(classify.keyword_server_labels(document), sort_keys=True)
        if task in ("task_level1", "task_level2", "task_level3"):
            return self._pick_option(instruction, document)
        if task == "l2_naming":
            # deterministic naming is handled by the hierarchy builder itself
            raise ProviderError("rule engine does not name clusters")
        raise ProviderError(f"unknown task kind: {task}")

    def _pick_option(self, instruction: str, document: str) -> str:
        options = parse_options(instruction)
        if not options:
            raise ProviderError("no options found in instruction")
        ids = [o[0] for o in options]
        texts = [o[1] for o in options]
        sims = cosine_to_many(self.embedder, document, texts)
        best = int(np.argmax(sims))
        # deterministic tie-break: smallest id among maxima
        top = max(sims)
        tied = sorted(ids[i] for i in range(len(ids)) if sims[i] >= top - 1e-12)
        return tied[0] if tied else ids[best]


_NON_OPTION_LABELS = {
    "description", "input", "summary", "level", "tool", "server", "tools",
    "example", "output", "note",
}


def parse_options(instruction: str) -> list[tuple[str, str]]:
    """Parse 'id: text' option lines out of a selection prompt."""
    options = []
    for line in instruction.splitlines():
        line = line.strip()
        if not line or ": " not in line:
            continue
        ident, text = line.split(": ", 1)
        ident = ident.strip()
        if not ident or " " in ident or ident.lower() in _NON_OPTION_LABELS:
            continue
        options.append((ident, text.strip()))
    return options


def cosine_to_many(embedder: "EmbeddingProvider", query: str, texts: list[str]) -> list[float]:
    vectors = embedder.embed([query] + texts)
    q = vectors[0]
    qn = np.linalg.norm(q)
    sims = []
    for v in vectors[1:]:
        vn = np.linalg.norm(v)
        sims.append(float(q @ v / (qn * vn)) if qn > 0 and vn > 0 else 0.0)
    return sims


class EmbeddingProvider(ABC):
    """Maps text to fixed-dimension vectors; same text -> same vector."""

    @property
    @abstractmethod
    def dimension(self) -> int: ...

    @abstractmethod
    def embed(self, texts) -> np.ndarray:
        """Return an (n, dimension) float array."""


class HashingEmbedder(EmbeddingProvider):
    """Deterministic hashed bag-of-words embedding (no fitted state)."""

    def __init__(self, dimension: int = 256):
        self._dim = dimension
        self._vec = HashingVectorizer(
            n_features=dimension, norm="l2", alternate_sign=True, analyzer="word"
        )

    @property
    def dimension(self) -> int:
        return self._dim

    def embed(self, texts) -> np.ndarray:
        texts = list(texts)
        if not texts:
            return np.zeros((0, self._dim))
        return np.asarray(self._vec.transform(texts).todense())


class HttpEmbeddingProvider(EmbeddingProvider):
    """Embeddings endpoint: {"model", "input": [...]} -> {"data": [{"embedding": [...]}]}."""

    def __init__(self, endpoint: str, model: str, dimension: int,
                 api_key_env: str = "MCP_SCOPE_API_KEY",
                 limiter: net.RateLimiter | None = None, timeout: float = 120.0):
        self.endpoint = endpoint
        self.model = model
        self._dim = dimension
        self.api_key_env = api_key_env
        self.limiter = limiter or net.RateLimiter(requests_per_second=1.0)
        self.timeout = timeout

    @property
    def dimension(self) -> int:
        return self._dim

    def embed(self, texts) -> np.ndarray:
        import requests

        texts = list(texts)
        key = os.environ.get(self.api_key_env)
        if not key:
            raise ProviderError(f"missing API key in ${self.api_key_env}")
        host = self.endpoint.split("/")[2] if "://" in self.endpoint else self.endpoint
        self.limiter.wait(host)
        try:
            resp = requests.post(
                self.endpoint,
                json={"model": self.model, "input": texts},
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise ProviderError(f"embedding endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderError(f"embedding HTTP {resp.status_code}")
        data = resp.json()["data"]
        arr = np.array([row["embedding"] for row in data], dtype=float)
        if arr.shape != (len(texts), self._dim):
            raise ProviderError(f"embedding dimension mismatch: got {arr.shape}")
        return arr
