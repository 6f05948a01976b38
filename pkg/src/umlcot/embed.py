"""Text embedders and cosine similarity.

``builtin`` is a hashed bag-of-words (FNV-1a, 64 bit) that needs no model
and is bitwise deterministic.  ``service`` talks to an HTTP endpoint that
serves a real sentence encoder::

    POST {endpoint}/embed   {"texts": [...]}
    200 -> {"embeddings": [[...], ...], "dimension": D}
"""

from __future__ import annotations

import functools
import math
import os
import re
import threading
from dataclasses import dataclass
from typing import Protocol, Sequence

import httpx
import numpy as np

from .exceptions import (
    DimensionMismatch,
    InputError,
    ServiceMalformedResponse,
    ServiceUnreachable,
)

ENDPOINT_ENV = "EMBED_ENDPOINT"

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_TOKEN_RE = re.compile(r"[^\W_]+")


class EmbeddingVector:
    """Read-only vector; either unit L2 norm or exactly all-zero."""

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64)
        arr.flags.writeable = False
        self.values = arr

    def __len__(self) -> int:
        return len(self.values)

    def __repr__(self) -> str:
        return f"EmbeddingVector(dim={len(self)}, norm_flag={self.norm_flag})"

    @property
    def dimension(self) -> int:
        return len(self.values)

    @property
    def is_zero(self) -> bool:
        return not self.values.any()

    @property
    def norm_flag(self) -> bool:
        return abs(float(np.linalg.norm(self.values)) - 1.0) <= 1e-6


@dataclass(frozen=True)
class EmbedderConfig:
    backend: str = "builtin"
    dimension: int = 256
    endpoint: str | None = None
    timeout_ms: int = 5000
    batch_size: int = 64

    def __post_init__(self):
        if self.backend not in ("builtin", "service"):
            raise InputError(f"unknown embedder backend {self.backend!r}")
        if self.backend == "service" and not self.endpoint:
            raise InputError("service backend needs an endpoint")
        if self.backend == "builtin" and self.endpoint:
            raise InputError("endpoint given for the builtin backend")
        for name in ("dimension", "timeout_ms", "batch_size"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise InputError(f"{name} must be a positive integer, got {value!r}")

    @classmethod
    def from_env(cls, **overrides) -> "EmbedderConfig":
        """Service config when ``EMBED_ENDPOINT`` is set, builtin otherwise."""
        endpoint = overrides.pop("endpoint", None) or os.environ.get(ENDPOINT_ENV)
        if endpoint:
            overrides.setdefault("backend", "service")
            return cls(endpoint=endpoint, **overrides)
        return cls(**overrides)


class Embedder(Protocol):
    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def hashed_counts(text: str, dimension: int) -> list[int]:
    counts = [0] * dimension
    for token in tokenize(text):
        counts[fnv1a_64(token.encode("utf-8")) % dimension] += 1
    return counts


def _unit(values: Sequence[float]) -> list[float]:
    norm = math.sqrt(math.fsum(v * v for v in values))
    if norm == 0.0:
        return [0.0] * len(values)
    return [v / norm for v in values]


class HashingEmbedder:
    def __init__(self, dimension: int = 256):
        self.dimension = dimension

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return [EmbeddingVector(_unit(hashed_counts(t, self.dimension))) for t in texts]


class ServiceEmbedder:
    """HTTP client for the embedding service; safe to share across threads."""

    def __init__(self, endpoint: str, timeout_ms: int = 5000, batch_size: int = 64):
        url = endpoint.rstrip("/")
        self.url = url if url.endswith("/embed") else url + "/embed"
        self.batch_size = batch_size
        self._client = httpx.Client(timeout=timeout_ms / 1000.0)
        self._dimension: int | None = None
        self._lock = threading.Lock()

    def close(self) -> None:
        self._client.close()

    def _post(self, batch: list[str]) -> list[list[float]]:
        try:
            resp = self._client.post(self.url, json={"texts": batch})
        except (httpx.TransportError, httpx.TimeoutException) as exc:
            raise ServiceUnreachable(f"{self.url}: {exc}") from exc
        if resp.status_code != 200:
            raise ServiceMalformedResponse(f"{self.url} returned HTTP {resp.status_code}")
        try:
            payload = resp.json()
        except ValueError as exc:
            raise ServiceMalformedResponse(f"{self.url}: response is not valid JSON") from exc
        if not isinstance(payload, dict) or not isinstance(payload.get("embeddings"), list):
            raise ServiceMalformedResponse(f"{self.url}: missing 'embeddings' list")
        rows = payload["embeddings"]
        if len(rows) != len(batch):
            raise ServiceMalformedResponse(
                f"{self.url}: {len(rows)} embeddings for {len(batch)} texts"
            )
        for row in rows:
            if not isinstance(row, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in row
            ):
                raise ServiceMalformedResponse(f"{self.url}: embedding is not a list of numbers")
        lengths = {len(row) for row in rows}
        declared = payload.get("dimension")
        if len(lengths) > 1 or (declared is not None and lengths != {declared}):
            raise DimensionMismatch(f"inconsistent embedding lengths {sorted(lengths)}")
        return rows

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        texts = list(texts)
        out: list[EmbeddingVector] = []
        for i in range(0, len(texts), self.batch_size):
            for row in self._post(texts[i : i + self.batch_size]):
                with self._lock:
                    if self._dimension is None:
                        self._dimension = len(row)
                    elif len(row) != self._dimension:
                        raise DimensionMismatch(
                            f"service switched dimension {self._dimension} -> {len(row)}"
                        )
                out.append(EmbeddingVector(_unit([float(v) for v in row])))
        return out


@functools.lru_cache(maxsize=None)
def get_embedder(cfg: EmbedderConfig) -> Embedder:
    if cfg.backend == "service":
        return ServiceEmbedder(cfg.endpoint, cfg.timeout_ms, cfg.batch_size)
    return HashingEmbedder(cfg.dimension)


def resolve_embedder(embedder: EmbedderConfig | Embedder | None) -> Embedder:
    if embedder is None:
        return get_embedder(EmbedderConfig())
    if isinstance(embedder, EmbedderConfig):
        return get_embedder(embedder)
    return embedder


def embed_batch(texts: Sequence[str], cfg: EmbedderConfig | None = None) -> list[EmbeddingVector]:
    if isinstance(texts, str) or not len(texts):
        raise InputError("embed_batch expects a non-empty list of texts")
    return resolve_embedder(cfg).embed(list(texts))


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity; 0.0 when either side is the zero vector.

    Written as dot / sqrt(|a|^2 |b|^2) so that cosine(v, v) is exactly 1.0.
    """
    va, vb = a.values, b.values
    if va.shape != vb.shape:
        raise DimensionMismatch(f"cannot compare dimensions {va.shape[0]} and {vb.shape[0]}")
    aa = float(np.dot(va, va))
    bb = float(np.dot(vb, vb))
    if aa == 0.0 or bb == 0.0:
        return 0.0
    value = float(np.dot(va, vb)) / math.sqrt(aa * bb)
    return min(1.0, max(-1.0, value))


def similarity_matrix(
    rows: Sequence[EmbeddingVector], cols: Sequence[EmbeddingVector]
) -> np.ndarray:
    sim = np.zeros((len(rows), len(cols)))
    for i, a in enumerate(rows):
        for j, b in enumerate(cols):
            sim[i, j] = cosine(a, b)
    return sim
