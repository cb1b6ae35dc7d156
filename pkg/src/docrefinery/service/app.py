"""FastAPI application over one pipeline configuration.

Endpoints open the store per request and mutating endpoints serialize on
one lock, so a long-running service and ad-hoc runs never interleave
journal appends. The export endpoint streams newline-delimited JSON, one
normalized record per line.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import replace

from fastapi import FastAPI, HTTPException, Response

from ..ingest import IngestError, SourceSpec, add_source
from ..normalize import parse_iso_timestamp
from ..pipeline import PipelineConfig, run_pipeline
from ..schema import load_schema_file
from ..store import (
    DocumentStore,
    NotPendingError,
    PromotionGateError,
    UnknownIdError,
)
from .models import (
    HealthResponse,
    ReviewDecision,
    ReviewItemOut,
    RunRequest,
    RunStatsOut,
    SourceSpecIn,
    SourceSpecOut,
)

logger = logging.getLogger(__name__)

NDJSON_MEDIA_TYPE = "application/x-ndjson"


def _review_out(item_id: str, item: dict) -> ReviewItemOut:
    report = item.get("report", {})
    return ReviewItemOut(
        id=item_id,
        doc_id=item.get("doc_id", item_id),
        status=item.get("status", "pending"),
        flagged_fields=list(report.get("flagged_fields", [])),
        rule_violations=list(report.get("rule_violations", [])),
        notes=list(report.get("notes", [])),
        resolution_note=item.get("resolution_note"),
    )


def create_app(config: PipelineConfig) -> FastAPI:
    app = FastAPI(title="docrefinery", version="0.1.0")
    write_lock = threading.Lock()

    def open_store() -> DocumentStore:
        return DocumentStore(config.store_root)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse()

    @app.get("/records")
    def records(schema: str | None = None, since: str | None = None) -> Response:
        since_dt = None
        if since is not None:
            since_dt = parse_iso_timestamp(since)
            if since_dt is None:
                raise HTTPException(status_code=422, detail=f"bad since timestamp: {since!r}")
        store = open_store()
        try:
            lines = []
            for _, record in store.scan("normalized"):
                if schema is not None and record.get("schema_id") != schema:
                    continue
                if since_dt is not None:
                    accepted = parse_iso_timestamp(record.get("accepted_at", ""))
                    if accepted is None or accepted < since_dt:
                        continue
                lines.append(json.dumps(record, sort_keys=True, ensure_ascii=False))
        finally:
            store.close()
        body = "\n".join(lines) + ("\n" if lines else "")
        return Response(content=body, media_type=NDJSON_MEDIA_TYPE)

    @app.get("/review", response_model=list[ReviewItemOut])
    def review_list() -> list[ReviewItemOut]:
        store = open_store()
        try:
            return [_review_out(i, item) for i, item in store.pending_reviews()]
        finally:
            store.close()

    def _resolve(item_id: str, decision: str, body: ReviewDecision) -> ReviewItemOut:
        schema = load_schema_file(config.schema_path)
        with write_lock:
            store = open_store()
            try:
                item = store.resolve_review(item_id, decision, schema, note=body.note)
            except UnknownIdError as exc:
                raise HTTPException(status_code=404, detail=str(exc)) from None
            except NotPendingError as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from None
            except PromotionGateError as exc:
                raise HTTPException(
                    status_code=422,
                    detail={
                        "message": "candidate fails rule checks",
                        "violations": [
                            {"field": v.field, "code": v.code, "detail": v.detail}
                            for v in exc.violations
                        ],
                    },
                ) from None
            finally:
                store.close()
        return _review_out(item_id, item)

    @app.post("/review/{item_id}/approve", response_model=ReviewItemOut)
    def review_approve(item_id: str, body: ReviewDecision) -> ReviewItemOut:
        return _resolve(item_id, "approved", body)

    @app.post("/review/{item_id}/reject", response_model=ReviewItemOut)
    def review_reject(item_id: str, body: ReviewDecision) -> ReviewItemOut:
        return _resolve(item_id, "rejected", body)

    @app.post("/sources", response_model=SourceSpecOut, status_code=201)
    def sources_add(body: SourceSpecIn) -> SourceSpecOut:
        try:
            spec = SourceSpec(
                source_id=body.source_id,
                kind=body.kind,
                locator=body.locator,
                poll_interval=body.poll_interval,
                content_kind_hint=body.content_kind_hint,
            )
            with write_lock:
                add_source(config.sources_path, spec)
        except IngestError as exc:
            status = 409 if "already registered" in str(exc) else 422
            raise HTTPException(status_code=status, detail=str(exc)) from None
        return SourceSpecOut(**body.model_dump())

    @app.post("/run", response_model=RunStatsOut)
    def run(body: RunRequest) -> RunStatsOut:
        run_config = config
        if body.workers is not None:
            run_config = replace(run_config, workers=body.workers)
        if body.dedup_threshold is not None:
            run_config = replace(run_config, dedup_threshold=body.dedup_threshold)
        if body.replicas is not None:
            run_config = replace(
                run_config,
                validation=replace(run_config.validation, num_replicas=body.replicas),
            )
        with write_lock:
            outcome = run_pipeline(run_config)
        return RunStatsOut(**outcome.stats)

    return app
