"""Vector representations used for dedup, self-consistency checks and metrics.

The built-in embedder is a deterministic hashed term-frequency model:
lowercase, split on non-alphanumerics, hash each token into one of ``dim``
buckets, count, L2-normalize. It is a desk-scale stand-in for sentence
encoders; the provider contract admits real encoders behind the same
interface (see RemoteEmbedder for the wire format).
"""

from __future__ import annotations

import hashlib
import re
from abc import ABC, abstractmethod
from functools import lru_cache

import httpx
import numpy as np

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)

NORM_TOLERANCE = 1e-6


class EmbeddingError(ValueError):
    """Raised for untokenizable text or malformed vectors."""


class DimensionMismatchError(EmbeddingError):
    """Raised when vectors from different spaces are combined."""


class EmbeddingVector:
    """Fixed-dimension, L2-normalized real vector.

    Construction normalizes the input; zero or non-finite inputs are errors.
    Instances are immutable and compare by exact element equality.
    """

    __slots__ = ("dim", "values")

    def __init__(self, values) -> None:
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise EmbeddingError("embedding must be a non-empty 1-d vector")
        if not np.all(np.isfinite(arr)):
            raise EmbeddingError("embedding contains non-finite values")
        norm = float(np.linalg.norm(arr))
        if norm == 0.0:
            raise EmbeddingError("cannot normalize a zero vector")
        if abs(norm - 1.0) > NORM_TOLERANCE:
            arr = arr / norm
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "dim", int(arr.shape[0]))

    def __setattr__(self, name, value):
        raise AttributeError("EmbeddingVector is immutable")

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return self.dim == other.dim and bool(np.array_equal(self.values, other.values))

    def __repr__(self) -> str:
        return f"EmbeddingVector(dim={self.dim})"


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Dot product of two unit vectors; symmetric, in [-1, 1] up to rounding."""
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return float(np.dot(a.values, b.values))


def tokenize(text: str) -> list[str]:
    """Lowercase tokens split on non-alphanumeric runs."""
    return _TOKEN_RE.findall(text.lower())


@lru_cache(maxsize=65536)
def _bucket(token: str, dim: int) -> int:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % dim


class EmbeddingProvider(ABC):
    """Contract for text embedders; embed must be deterministic per config."""

    provider_id: str
    dim: int

    @abstractmethod
    def embed(self, text: str) -> EmbeddingVector:
        """Embed one text into a unit vector. Raises EmbeddingError on empty text."""

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        return [self.embed(t) for t in texts]


class HashedTfEmbedder(EmbeddingProvider):
    """Deterministic hashed term-frequency embedder (dim=256 by default)."""

    def __init__(self, dim: int = 256) -> None:
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.provider_id = f"hashed-tf-{dim}"

    def embed(self, text: str) -> EmbeddingVector:
        tokens = tokenize(text)
        if not tokens:
            raise EmbeddingError("text has no tokens to embed")
        counts = np.zeros(self.dim, dtype=np.float64)
        for token in tokens:
            counts[_bucket(token, self.dim)] += 1.0
        return EmbeddingVector(counts)


class RemoteEmbeddingError(EmbeddingError):
    """Remote provider failed after retries; callers may retry the document."""


class RemoteEmbedder(EmbeddingProvider):
    """HTTP embedder speaking the batch wire contract.

    Request: ``{"texts": [...]}``; response: ``{"vectors": [[...], ...]}``.
    The dimension is fixed per provider and enforced on every response.
    """

    def __init__(
        self,
        endpoint: str,
        dim: int,
        provider_id: str = "remote",
        client: httpx.Client | None = None,
        max_retries: int = 3,
    ) -> None:
        self.endpoint = endpoint
        self.dim = dim
        self.provider_id = provider_id
        self._client = client or httpx.Client(timeout=30.0)
        self._max_retries = max_retries

    def embed(self, text: str) -> EmbeddingVector:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        for text in texts:
            if not text.strip():
                raise EmbeddingError("cannot embed empty text")
        last_error: Exception | None = None
        for _ in range(self._max_retries):
            try:
                response = self._client.post(self.endpoint, json={"texts": texts})
                if response.status_code >= 500:
                    last_error = RemoteEmbeddingError(f"server error {response.status_code}")
                    continue
                response.raise_for_status()
                payload = response.json()
                break
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last_error = exc
        else:
            raise RemoteEmbeddingError(f"remote embedder failed: {last_error}")
        vectors = payload.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise RemoteEmbeddingError("malformed response: vectors missing or wrong length")
        out = []
        for vec in vectors:
            if len(vec) != self.dim:
                raise DimensionMismatchError(
                    f"provider returned dim {len(vec)}, expected {self.dim}"
                )
            out.append(EmbeddingVector(vec))
        return out
