"""Clients for the three remote model endpoints.

All endpoints speak JSON over a single request/response POST:

* embedding: ``{model, texts: [...]}`` -> ``{dim, vectors: [[...], ...]}``
* scorer:    ``{model, rows: [...]}``  -> ``{scores: [...]}``
* completion: ``{model, prompt, max_new_tokens, temperature}`` -> ``{text}``

Locators with the ``stub://`` scheme select deterministic in-process
implementations so pipelines run without any model server.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass
from urllib.parse import parse_qs, urlsplit

import httpx
import numpy as np

from .errors import ProviderProtocolError


@dataclass(frozen=True)
class EmbeddingProviderEndpoint:
    locator: str
    model: str = "default"
    timeout: float = 30.0
    retries: int = 2

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass(frozen=True)
class SelectionScorerEndpoint:
    locator: str
    model: str = "default"
    timeout: float = 30.0

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass(frozen=True)
class LlmEndpoint:
    locator: str
    model: str = "default"
    max_input_tokens: int = 4096
    max_new_tokens: int = 256
    temperature: float = 0.0
    timeout: float = 120.0

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_input_tokens < 1:
            raise ValueError("max_input_tokens must be positive")


def _post_json(url: str, payload: dict, timeout: float, retries: int = 0) -> dict:
    last_error: Exception | None = None
    for attempt in range(retries + 1):
        try:
            response = httpx.post(url, json=payload, timeout=timeout)
            response.raise_for_status()
            return response.json()
        except (httpx.TransportError, httpx.HTTPStatusError) as exc:
            last_error = exc
            if attempt < retries:
                time.sleep(min(0.2 * 2**attempt, 2.0))
    raise ProviderProtocolError(f"endpoint {url} failed: {last_error}")


def _stub_params(locator: str) -> dict[str, str]:
    parts = urlsplit(locator)
    return {k: v[-1] for k, v in parse_qs(parts.query).items()}


def stub_vector(text: str, model: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic pseudo-embedding keyed by (model, text)."""
    digest = hashlib.sha256(f"{model}\x00{text}".encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "big") + seed
    rng = np.random.default_rng(key)
    return rng.standard_normal(dim)


class EmbeddingClient:
    """Fetch embedding vectors for texts, enforcing the wire contract."""

    def __init__(self, endpoint: EmbeddingProviderEndpoint):
        self.endpoint = endpoint
        self._stub: dict[str, str] | None = None
        if endpoint.locator.startswith("stub://"):
            self._stub = _stub_params(endpoint.locator)

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("texts must be non-empty")
        if self._stub is not None:
            dim = int(self._stub.get("dim", "16"))
            seed = int(self._stub.get("seed", "0"))
            return [stub_vector(t, self.endpoint.model, dim, seed) for t in texts]
        payload = {"model": self.endpoint.model, "texts": texts}
        body = _post_json(
            self.endpoint.locator, payload, self.endpoint.timeout, self.endpoint.retries
        )
        vectors = body.get("vectors")
        dim = body.get("dim")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ProviderProtocolError(
                f"expected {len(texts)} vectors, got "
                f"{len(vectors) if isinstance(vectors, list) else type(vectors).__name__}"
            )
        out = []
        for vec in vectors:
            arr = np.asarray(vec, dtype=np.float64)
            if arr.ndim != 1 or arr.shape[0] != dim:
                raise ProviderProtocolError("vector dimension disagrees with response dim")
            out.append(arr)
        return out


class ScorerClient:
    """Score cross-encoder input rows. ``stub://overlap`` scores by lexical
    overlap between the mention and edge segments of each row."""

    def __init__(self, endpoint: SelectionScorerEndpoint):
        self.endpoint = endpoint
        self._stub = endpoint.locator.startswith("stub://")

    def score(self, rows: list[str]) -> list[float]:
        if not rows:
            raise ValueError("rows must be non-empty")
        if self._stub:
            return [_overlap_score(row) for row in rows]
        payload = {"model": self.endpoint.model, "rows": rows}
        body = _post_json(self.endpoint.locator, payload, self.endpoint.timeout)
        scores = body.get("scores")
        if not isinstance(scores, list) or len(scores) != len(rows):
            raise ProviderProtocolError(
                f"expected {len(rows)} scores, got "
                f"{len(scores) if isinstance(scores, list) else type(scores).__name__}"
            )
        return [float(s) for s in scores]


def _overlap_score(row: str) -> float:
    segments = [s.strip() for s in row.split("[SEP]") if s.strip()]
    if len(segments) < 2:
        return 0.0
    mention_tokens = {t.lower() for t in segments[0].split() if not t.startswith("[")}
    edge_tokens = {t.lower() for t in segments[1].split() if not t.startswith("[")}
    if not mention_tokens or not edge_tokens:
        return 0.0
    return len(mention_tokens & edge_tokens) / len(mention_tokens | edge_tokens)


class CompletionClient:
    """Generate a completion for a prompt. ``stub://none`` always answers
    "None" (keeps slates unchanged), for offline runs."""

    def __init__(self, endpoint: LlmEndpoint):
        self.endpoint = endpoint
        self._stub = endpoint.locator.startswith("stub://")

    def complete(self, prompt: str) -> str:
        if self._stub:
            return "None"
        payload = {
            "model": self.endpoint.model,
            "prompt": prompt,
            "max_new_tokens": self.endpoint.max_new_tokens,
            "temperature": self.endpoint.temperature,
        }
        body = _post_json(self.endpoint.locator, payload, self.endpoint.timeout)
        text = body.get("text")
        if not isinstance(text, str):
            raise ProviderProtocolError("completion response lacks a text field")
        return text
