"""Text embedding providers and cosine similarity.

Two embedder kinds share one contract (`embed_batch` plus a `dimension`
attribute): a fully deterministic hashing embedder for offline use and
tests, and a remote provider speaking the common `/v1/embeddings` wire
format. All produced vectors are unit L2 norm, except the all-zero
vector which stands in for empty text.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from typing import Sequence

import httpx

EmbeddingVector = list[float]

_TOKEN_PATTERN = re.compile(r"[a-z0-9]+")
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

API_KEY_ENV = "VA_API_KEY"


class EmbeddingError(Exception):
    pass


class DimensionMismatch(EmbeddingError):
    pass


class ProviderUnreachable(EmbeddingError):
    pass


class ProviderMalformedResponse(EmbeddingError):
    pass


@dataclass
class EmbedderConfig:
    """Which embedder to build: deterministic hash or a remote service."""

    kind: str = "hash"  # hash | remote
    dimension: int = 256
    endpoint: str | None = None
    model: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("hash", "remote"):
            raise ValueError(f"unknown embedder kind {self.kind!r}")
        if self.dimension < 2:
            raise ValueError("embedding dimension must be >= 2")


def fnv1a64(token: str) -> int:
    """64-bit FNV-1a hash of the token's UTF-8 bytes."""
    value = _FNV_OFFSET
    for byte in token.encode("utf-8"):
        value = ((value ^ byte) * _FNV_PRIME) & _MASK64
    return value


def hash_embed(text: str, dimension: int = 256) -> EmbeddingVector:
    """Deterministic bag-of-tokens embedding.

    Lowercases, splits into ASCII alphanumeric runs, buckets each token by
    its FNV-1a hash modulo `dimension`, counts, then L2-normalizes. Empty
    token lists map to the zero vector (the empty-text sentinel).
    """
    if dimension < 2:
        raise ValueError("embedding dimension must be >= 2")
    vec = [0.0] * dimension
    tokens = _TOKEN_PATTERN.findall(text.lower())
    if not tokens:
        return vec
    for token in tokens:
        vec[fnv1a64(token) % dimension] += 1.0
    norm = math.sqrt(sum(v * v for v in vec))
    return [v / norm for v in vec]


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine similarity in [-1, 1]; zero vectors score 0.0 against anything."""
    if len(a) != len(b):
        raise DimensionMismatch(f"vector dimensions differ: {len(a)} vs {len(b)}")
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(x * x for x in b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    dot = sum(x * y for x, y in zip(a, b))
    return max(-1.0, min(1.0, dot / (norm_a * norm_b)))


def _normalize(values: list[float]) -> list[float]:
    norm = math.sqrt(sum(v * v for v in values))
    if norm == 0.0:
        return [0.0] * len(values)
    return [v / norm for v in values]


class HashEmbedder:
    """Offline embedder backed by hash_embed; deterministic across runs."""

    def __init__(self, dimension: int = 256):
        if dimension < 2:
            raise ValueError("embedding dimension must be >= 2")
        self.dimension = dimension

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("embed_batch requires a non-empty list of texts")
        return [hash_embed(text, self.dimension) for text in texts]


class RemoteEmbedder:
    """Embedder calling POST {endpoint}/v1/embeddings, one request per batch.

    Returned vectors are re-normalized locally so downstream score
    semantics can assume unit vectors. The API key, when present in the
    VA_API_KEY environment variable, is sent as a bearer token.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        dimension: int | None = None,
        timeout: float = 30.0,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.dimension = dimension
        self.timeout = timeout

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("embed_batch requires a non-empty list of texts")
        headers = {}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            resp = httpx.post(
                f"{self.endpoint}/v1/embeddings",
                json={"model": self.model, "input": list(texts)},
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise ProviderUnreachable(f"embedding provider at {self.endpoint}: {exc}") from exc
        try:
            rows = resp.json()["data"]
            vectors = [[float(v) for v in row["embedding"]] for row in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderMalformedResponse(f"bad embeddings payload: {exc}") from exc
        if len(vectors) != len(texts):
            raise ProviderMalformedResponse(
                f"expected {len(texts)} embeddings, got {len(vectors)}"
            )
        if self.dimension is None:
            self.dimension = len(vectors[0])
        for vec in vectors:
            if len(vec) != self.dimension:
                raise DimensionMismatch(
                    f"provider returned dimension {len(vec)}, expected {self.dimension}"
                )
        return [_normalize(vec) for vec in vectors]


def build_embedder(config: EmbedderConfig) -> HashEmbedder | RemoteEmbedder:
    if config.kind == "hash":
        return HashEmbedder(config.dimension)
    if not config.endpoint or not config.model:
        raise ValueError("remote embedder requires endpoint and model")
    return RemoteEmbedder(config.endpoint, config.model, config.dimension)


def embed_batch(texts: Sequence[str], config: EmbedderConfig) -> list[EmbeddingVector]:
    """Embed a batch of texts with the embedder described by `config`."""
    return build_embedder(config).embed_batch(texts)
