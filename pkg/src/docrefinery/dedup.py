"""Semantic near-duplicate detection over stored document embeddings.

An incoming document is discarded when its cosine similarity to any stored
document strictly exceeds the index threshold. Duplicates never reach the
LLM stage, which is the pipeline's main cost lever.
"""

from __future__ import annotations

import logging
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding import DimensionMismatchError, EmbeddingVector, cosine_similarity

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.92


class DedupError(ValueError):
    pass


class ProviderMismatchError(DedupError):
    """Vector from a different embedding provider than the index was built with."""


class DuplicateEntryError(DedupError):
    """doc_id already present in the index."""


@dataclass(frozen=True)
class DedupDecision:
    """Either unique, or duplicate_of a stored doc with the winning similarity."""

    duplicate_of: str | None
    similarity: float | None

    @property
    def is_duplicate(self) -> bool:
        return self.duplicate_of is not None

    @classmethod
    def unique(cls) -> "DedupDecision":
        return cls(None, None)

    @classmethod
    def duplicate(cls, doc_id: str, similarity: float) -> "DedupDecision":
        return cls(doc_id, similarity)


class DedupIndex:
    """Insertion-ordered list of (doc_id, vector) with a linear-scan check.

    Check never mutates; insert-then-check is the only path to a duplicate
    decision. Check and insert are serialized internally (single writer).
    """

    def __init__(self, provider_id: str, dim: int, threshold: float = DEFAULT_THRESHOLD):
        if not (0.0 < threshold <= 1.0):
            raise DedupError(f"threshold must be in (0, 1], got {threshold}")
        self.provider_id = provider_id
        self.dim = dim
        self.threshold = threshold
        self._doc_ids: list[str] = []
        self._vectors: list[np.ndarray] = []
        self._known: set[str] = set()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._doc_ids)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._known

    def _check_vector(self, vector: EmbeddingVector, provider_id: str | None):
        if provider_id is not None and provider_id != self.provider_id:
            raise ProviderMismatchError(
                f"index built with {self.provider_id!r}, vector from {provider_id!r}"
            )
        if vector.dim != self.dim:
            raise DimensionMismatchError(f"index dim {self.dim}, vector dim {vector.dim}")

    def check(self, vector: EmbeddingVector, provider_id: str | None = None) -> DedupDecision:
        """Duplicate iff max similarity over entries strictly exceeds the threshold.

        The reported doc_id is an argmax; ties break toward earliest insertion.
        """
        self._check_vector(vector, provider_id)
        with self._lock:
            if not self._doc_ids:
                return DedupDecision.unique()
            sims = np.array([float(np.dot(v, vector.values)) for v in self._vectors])
            best = int(np.argmax(sims))
            best_sim = float(sims[best])
        if best_sim > self.threshold:
            return DedupDecision.duplicate(self._doc_ids[best], best_sim)
        return DedupDecision.unique()

    def insert(self, doc_id: str, vector: EmbeddingVector, provider_id: str | None = None):
        self._check_vector(vector, provider_id)
        with self._lock:
            if doc_id in self._known:
                raise DuplicateEntryError(f"doc_id already indexed: {doc_id}")
            self._doc_ids.append(doc_id)
            self._vectors.append(vector.values)
            self._known.add(doc_id)

    def entries(self) -> list[tuple[str, EmbeddingVector]]:
        with self._lock:
            return [(d, EmbeddingVector(v)) for d, v in zip(self._doc_ids, self._vectors)]

    # Sidecar persistence: per entry, u32 doc_id byte length, the utf-8
    # doc_id, u32 dim, then dim little-endian float64 values.

    def save(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with self._lock:
            with open(tmp, "wb") as fh:
                for doc_id, vec in zip(self._doc_ids, self._vectors):
                    raw_id = doc_id.encode("utf-8")
                    fh.write(struct.pack("<I", len(raw_id)))
                    fh.write(raw_id)
                    fh.write(struct.pack("<I", vec.shape[0]))
                    fh.write(struct.pack(f"<{vec.shape[0]}d", *vec))
                fh.flush()
        tmp.replace(path)

    @classmethod
    def load(
        cls,
        path: str | Path,
        provider_id: str,
        dim: int,
        threshold: float = DEFAULT_THRESHOLD,
    ) -> "DedupIndex":
        index = cls(provider_id, dim, threshold)
        data = Path(path).read_bytes()
        offset = 0
        try:
            while offset < len(data):
                (id_len,) = struct.unpack_from("<I", data, offset)
                offset += 4
                if offset + id_len > len(data):
                    raise DedupError(f"sidecar truncated at offset {offset}")
                doc_id = data[offset : offset + id_len].decode("utf-8")
                offset += id_len
                (vec_dim,) = struct.unpack_from("<I", data, offset)
                offset += 4
                if vec_dim != dim:
                    raise DimensionMismatchError(
                        f"sidecar entry {doc_id} has dim {vec_dim}, expected {dim}"
                    )
                values = struct.unpack_from(f"<{vec_dim}d", data, offset)
                offset += 8 * vec_dim
                index.insert(doc_id, EmbeddingVector(values))
        except struct.error as exc:
            raise DedupError(f"sidecar truncated or corrupt at offset {offset}") from exc
        return index
