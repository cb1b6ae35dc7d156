"""Request and response shapes for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"


class SourceSpecIn(BaseModel):
    source_id: str
    kind: str
    locator: str
    poll_interval: float = 300.0
    content_kind_hint: str | None = None


class SourceSpecOut(SourceSpecIn):
    pass


class ReviewDecision(BaseModel):
    note: str | None = None


class ReviewItemOut(BaseModel):
    id: str
    doc_id: str
    status: str
    flagged_fields: list[str] = Field(default_factory=list)
    rule_violations: list[dict] = Field(default_factory=list)
    notes: list[str] = Field(default_factory=list)
    resolution_note: str | None = None


class RunRequest(BaseModel):
    workers: int | None = None
    replicas: int | None = None
    dedup_threshold: float | None = None


class RunStatsOut(BaseModel):
    documents_fetched: int
    documents_extracted: int
    extraction_failures: int
    duplicates_discarded: int
    documents_processed: int
    accepted: int
    manual_review: int
    reprocess: int
    accepted_rate: float
    flagged_rate: float
    llm_calls: int
    total_tokens: int
    total_latency_ms: int
    mean_tokens_per_object: float
    mean_latency_ms_per_object: float
    skips: list[dict] = Field(default_factory=list)
