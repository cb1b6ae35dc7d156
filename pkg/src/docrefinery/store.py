"""File-backed document store: append-only journals with id indexes.

Each collection is one newline-delimited JSON journal; every line holds
one version of one item and the last version wins on replay. Writes are
flushed and fsynced before they are acknowledged, torn tails from crashes
are truncated away on open, and compaction rewrites a journal down to the
live versions. An .idx sidecar per journal caches the id index for
external tooling; the journal itself stays the source of truth.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import asdict, dataclass
from pathlib import Path

from .ingest import RawDocument
from .schema import ExtractionSchema, validate_record
from .validator import violation_to_dict

logger = logging.getLogger(__name__)

COLLECTIONS = ("raw", "normalized", "reports", "review")
REVIEW_STATUSES = ("pending", "approved", "rejected")


class StoreError(Exception):
    pass


class DuplicateIdError(StoreError):
    pass


class UnknownIdError(StoreError):
    pass


class NotPendingError(StoreError):
    pass


class MissingRawError(StoreError):
    """Normalized record would reference a raw document that is not stored."""


class PromotionGateError(StoreError):
    """Approval blocked: the candidate no longer passes the rule checks."""

    def __init__(self, violations):
        super().__init__("candidate fails rule checks")
        self.violations = violations


@dataclass(frozen=True)
class NormalizedRecord:
    """A validated, accepted record bound to its raw document and schema."""

    doc_id: str
    schema_id: str
    schema_version: int
    fields: dict
    provenance: dict
    accepted_at: str

    @property
    def record_id(self) -> str:
        return f"{self.doc_id}:v{self.schema_version}"


@dataclass(frozen=True)
class ReviewItem:
    doc_id: str
    candidate: dict
    report: dict
    status: str = "pending"
    resolution_note: str | None = None
    gate_violations: tuple = ()


class Collection:
    """One journal file plus an in-memory id → (offset, length) index."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._index: dict[str, tuple[int, int]] = {}
        self._order: list[str] = []
        self._lock = threading.Lock()
        self._fd = os.open(self.path, os.O_RDWR | os.O_CREAT, 0o644)
        self._end = 0
        self._replay()

    def _replay(self):
        size = os.fstat(self._fd).st_size
        data = os.pread(self._fd, size, 0) if size else b""
        offset = 0
        while offset < len(data):
            newline = data.find(b"\n", offset)
            if newline == -1:
                break  # torn tail from an unacknowledged write
            line = data[offset:newline]
            try:
                obj = json.loads(line)
                item_id = obj["id"]
            except (json.JSONDecodeError, KeyError, TypeError):
                break
            if item_id not in self._index:
                self._order.append(item_id)
            self._index[item_id] = (offset, len(line))
            offset = newline + 1
        self._end = offset
        if offset < size:
            os.ftruncate(self._fd, offset)
            logger.warning("truncated torn tail of %s at offset %d", self.path, offset)

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._index

    def put(self, item_id: str, data: dict, overwrite: bool = False) -> str:
        """Durably append one version; acknowledged means fsynced."""
        line = json.dumps({"id": item_id, "data": data}, sort_keys=True, ensure_ascii=False)
        raw = (line + "\n").encode("utf-8")
        with self._lock:
            if item_id in self._index and not overwrite:
                raise DuplicateIdError(f"{self.path.stem}: id already present: {item_id}")
            offset = self._end
            os.pwrite(self._fd, raw, offset)
            os.fsync(self._fd)
            if item_id not in self._index:
                self._order.append(item_id)
            self._index[item_id] = (offset, len(raw) - 1)
            self._end = offset + len(raw)
        return item_id

    def get(self, item_id: str):
        with self._lock:
            entry = self._index.get(item_id)
        if entry is None:
            return None
        offset, length = entry
        raw = os.pread(self._fd, length, offset)
        return json.loads(raw)["data"]

    def ids(self) -> list[str]:
        with self._lock:
            return list(self._order)

    def scan(self):
        """Yield live items in first-insertion order."""
        for item_id in self.ids():
            item = self.get(item_id)
            if item is not None:
                yield item_id, item

    def write_index_sidecar(self):
        sidecar = self.path.with_suffix(".idx")
        tmp = sidecar.with_suffix(".idx.tmp")
        with self._lock:
            lines = [f"{item_id}\t{off}\t{length}" for item_id, (off, length) in self._index.items()]
        tmp.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        tmp.replace(sidecar)

    def compact(self):
        """Rewrite the journal keeping only the live version of each id."""
        tmp = self.path.with_suffix(".ndjson.tmp")
        with self._lock:
            entries = [(item_id, self._index[item_id]) for item_id in self._order]
            with open(tmp, "wb") as fh:
                new_index = {}
                position = 0
                for item_id, (offset, length) in entries:
                    raw = os.pread(self._fd, length, offset) + b"\n"
                    fh.write(raw)
                    new_index[item_id] = (position, length)
                    position += len(raw)
                fh.flush()
                os.fsync(fh.fileno())
            tmp.replace(self.path)
            os.close(self._fd)
            self._fd = os.open(self.path, os.O_RDWR | os.O_CREAT, 0o644)
            self._index = new_index
            self._end = position
        self.write_index_sidecar()

    def close(self):
        self.write_index_sidecar()
        os.close(self._fd)


def _raw_to_dict(doc: RawDocument) -> dict:
    return asdict(doc)


def raw_from_dict(data: dict) -> RawDocument:
    return RawDocument(**data)


def normalized_to_dict(record: NormalizedRecord) -> dict:
    return asdict(record)


def normalized_from_dict(data: dict) -> NormalizedRecord:
    return NormalizedRecord(**data)


def review_to_dict(item: ReviewItem) -> dict:
    data = asdict(item)
    data["gate_violations"] = list(item.gate_violations)
    return data


class DocumentStore:
    """The four pipeline collections under one root directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._collections = {
            name: Collection(self.root / f"{name}.ndjson") for name in COLLECTIONS
        }
        self._report_counts: dict[str, int] = {}
        for report_id in self._collections["reports"].ids():
            doc_id = report_id.rsplit(":r", 1)[0]
            self._report_counts[doc_id] = self._report_counts.get(doc_id, 0) + 1

    def collection(self, name: str) -> Collection:
        if name not in self._collections:
            raise StoreError(f"unknown collection: {name}")
        return self._collections[name]

    def put_raw(self, doc: RawDocument) -> str:
        return self.collection("raw").put(doc.doc_id, _raw_to_dict(doc))

    def put_normalized(self, record: NormalizedRecord) -> str:
        if record.doc_id not in self.collection("raw"):
            raise MissingRawError(f"no raw document for {record.doc_id}")
        return self.collection("normalized").put(record.record_id, normalized_to_dict(record))

    def put_report(self, doc_id: str, report: dict) -> str:
        count = self._report_counts.get(doc_id, 0)
        report_id = f"{doc_id}:r{count}"
        self.collection("reports").put(report_id, report)
        self._report_counts[doc_id] = count + 1
        return report_id

    def put_review(self, item: ReviewItem) -> str:
        return self.collection("review").put(item.doc_id, review_to_dict(item))

    def get(self, name: str, item_id: str):
        return self.collection(name).get(item_id)

    def scan(self, name: str):
        return self.collection(name).scan()

    def pending_reviews(self) -> list[tuple[str, dict]]:
        return [(i, item) for i, item in self.scan("review") if item.get("status") == "pending"]

    def resolve_review(
        self,
        review_id: str,
        decision: str,
        schema: ExtractionSchema,
        note: str | None = None,
        accepted_at: str | None = None,
    ) -> dict:
        """Approve (promoting through the rule gate) or reject a pending item."""
        if decision not in ("approved", "rejected"):
            raise StoreError(f"decision must be approved or rejected, got {decision!r}")
        review = self.collection("review")
        item = review.get(review_id)
        if item is None:
            raise UnknownIdError(f"no review item: {review_id}")
        if item.get("status") != "pending":
            raise NotPendingError(f"review item {review_id} is {item.get('status')}")
        if decision == "approved":
            fields = item.get("candidate", {}).get("fields", {})
            violations = validate_record(schema, fields)
            if violations:
                item["gate_violations"] = [violation_to_dict(v) for v in violations]
                review.put(review_id, item, overwrite=True)
                raise PromotionGateError(violations)
            record = NormalizedRecord(
                doc_id=item["doc_id"],
                schema_id=schema.schema_id,
                schema_version=schema.version,
                fields=fields,
                provenance=item.get("candidate", {}).get("provenance", {}),
                accepted_at=accepted_at or "",
            )
            self.put_normalized(record)
        item["status"] = decision
        item["resolution_note"] = note
        review.put(review_id, item, overwrite=True)
        return item

    def referential_gaps(self) -> list[str]:
        """doc_ids of normalized records whose raw counterpart is missing."""
        raw = self.collection("raw")
        gaps = []
        for _, record in self.scan("normalized"):
            if record["doc_id"] not in raw:
                gaps.append(record["doc_id"])
        return gaps

    def compact(self):
        for collection in self._collections.values():
            collection.compact()

    def close(self):
        for collection in self._collections.values():
            collection.close()
