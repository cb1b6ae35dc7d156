"""End-to-end run orchestration: fetch, extract, dedup, validate, store.

A run is driven by one JSON config file; every knob a subcommand flag can
override lives here too. Documents flow in deterministic source order,
duplicates are discarded before any generation call, and results are
committed in submission order so a fixed seed yields byte-identical runs.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .dedup import DedupIndex, DuplicateEntryError
from .embedding import EmbeddingProvider, HashedTfEmbedder, RemoteEmbedder
from .ingest import (
    EmptyExtractionError,
    Fetcher,
    IngestError,
    RawDocument,
    SkipRecord,
    extract_main_content,
    load_sources,
    make_raw_document,
)
from .mockllm import MockConfig, MockProvider, load_scripts
from .normalize import parse_iso_timestamp
from .schema import ExtractionSchema, load_schema_file
from .store import DocumentStore, DuplicateIdError, NormalizedRecord, ReviewItem
from .structurer import LlmProvider, PromptConfig, RemoteLlmProvider
from .validator import ValidationConfig, report_to_dict, validate

logger = logging.getLogger(__name__)

DEDUP_SIDECAR = "dedup.vec"


class PipelineConfigError(Exception):
    """Fatal configuration problem; the run never starts."""


@dataclass(frozen=True)
class PipelineConfig:
    sources_path: Path
    schema_path: Path
    store_root: Path
    dedup_threshold: float = 0.92
    workers: int = 1
    fixed_time: str | None = None
    embedding: dict = field(default_factory=dict)
    llm: dict = field(default_factory=dict)
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    fetch: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.workers < 1:
            raise PipelineConfigError("workers must be >= 1")


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else base / path


def load_config(path: str | Path, overrides: dict | None = None) -> PipelineConfig:
    """Read a config file; overrides (from flags) win over file values."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise PipelineConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise PipelineConfigError(f"config file is not valid JSON: {exc}") from None
    if overrides:
        for key, value in overrides.items():
            if value is None:
                continue
            if key == "replicas":
                data.setdefault("validation", {})["num_replicas"] = value
            else:
                data[key] = value
    base = path.parent
    try:
        validation = ValidationConfig(**data.get("validation", {}))
        prompt = PromptConfig(
            temperature=validation.reference_temperature,
            **{k: v for k, v in data.get("prompt", {}).items() if k != "temperature"},
        )
        return PipelineConfig(
            sources_path=_resolve(base, data["sources"]),
            schema_path=_resolve(base, data["schema"]),
            store_root=_resolve(base, data["store_root"]),
            dedup_threshold=float(data.get("dedup_threshold", 0.92)),
            workers=int(data.get("workers", 1)),
            fixed_time=data.get("fixed_time"),
            embedding=data.get("embedding", {}),
            llm=data.get("llm", {}),
            validation=validation,
            prompt=prompt,
            fetch=data.get("fetch", {}),
        )
    except KeyError as exc:
        raise PipelineConfigError(f"config missing required key: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise PipelineConfigError(f"bad config value: {exc}") from None


def make_embedder(config: PipelineConfig) -> EmbeddingProvider:
    settings = config.embedding
    provider = settings.get("provider", "hashed-tf")
    if provider == "hashed-tf":
        return HashedTfEmbedder(dim=int(settings.get("dim", 256)))
    if provider == "remote":
        return RemoteEmbedder(
            endpoint=settings["endpoint"],
            dim=int(settings["dim"]),
            provider_id=settings.get("provider_id", "remote"),
        )
    raise PipelineConfigError(f"unknown embedding provider: {provider!r}")


def make_llm_provider(config: PipelineConfig, schema: ExtractionSchema) -> LlmProvider:
    settings = config.llm
    provider = settings.get("provider", "mock")
    if provider == "mock":
        mock_config = MockConfig(
            seed=int(settings.get("seed", 0)),
            per_field_hallucination_prob=float(settings.get("per_field_hallucination_prob", 0.0)),
            agreement_model=settings.get("agreement_model", "independent"),
            rho=float(settings.get("rho", 0.0)),
            tokens_per_call=int(settings.get("tokens_per_call", 800)),
            latency_per_call_ms=int(settings.get("latency_per_call_ms", 420)),
        )
        scripts = load_scripts(settings["scripts"]) if settings.get("scripts") else None
        return MockProvider(mock_config, schema, scripts)
    if provider == "remote":
        return RemoteLlmProvider(
            endpoint=settings["endpoint"], model_id=settings.get("model_id", "remote")
        )
    raise PipelineConfigError(f"unknown llm provider: {provider!r}")


def _parse_fixed_time(value: str) -> datetime:
    parsed = parse_iso_timestamp(value)
    if parsed is None:
        raise PipelineConfigError(f"fixed_time is not an ISO timestamp: {value!r}")
    return parsed if parsed.tzinfo else parsed.replace(tzinfo=timezone.utc)


def _candidate_to_dict(record) -> dict:
    return {
        "fields": record.fields,
        "provenance": record.provenance,
        "parse_repairs": list(record.parse_repairs),
    }


@dataclass
class RunOutcome:
    stats: dict
    document_errors: int


def run_pipeline(config: PipelineConfig) -> RunOutcome:
    """Execute one full run and return its printable stats.

    Per-document failures (fetch skips, empty extractions, provider
    exhaustion) are recorded in the stats and never abort the run.
    """
    for required in (config.sources_path, config.schema_path):
        if not required.exists():
            raise PipelineConfigError(f"referenced file does not exist: {required}")
    schema = load_schema_file(config.schema_path)
    sources = load_sources(config.sources_path)
    embedder = make_embedder(config)
    provider = make_llm_provider(config, schema)
    store = DocumentStore(config.store_root)
    sidecar = config.store_root / DEDUP_SIDECAR
    if sidecar.exists():
        index = DedupIndex.load(sidecar, embedder.provider_id, embedder.dim, config.dedup_threshold)
    else:
        index = DedupIndex(embedder.provider_id, embedder.dim, config.dedup_threshold)
    fixed_now = _parse_fixed_time(config.fixed_time) if config.fixed_time else None
    now_iso = (fixed_now or datetime.now(timezone.utc)).isoformat()

    fetcher = Fetcher(
        politeness_delay=float(config.fetch.get("politeness_delay", 1.0)),
        max_retries=int(config.fetch.get("max_retries", 3)),
        max_body_bytes=int(config.fetch.get("max_body_bytes", 10 * 1024 * 1024)),
        batch_lines=int(config.fetch.get("batch_lines", 1)),
    )

    documents: list[RawDocument] = []
    fetched = 0
    extraction_failures = 0
    for source in sources:
        for result in fetcher.fetch(source):
            fetched += 1
            try:
                title, text = extract_main_content(result.body, result.media_type)
            except (EmptyExtractionError, IngestError) as exc:
                extraction_failures += 1
                fetcher.skip_log.append(SkipRecord(source.source_id, result.locator, str(exc)))
                logger.warning("extraction failed for %s: %s", result.locator, exc)
                continue
            documents.append(
                make_raw_document(source, result.locator, title, text, now=fixed_now)
            )

    queued: list[RawDocument] = []
    duplicates = 0
    seen_ids: set[str] = set()
    for doc in documents:
        if doc.doc_id in seen_ids:
            duplicates += 1
            continue
        vector = embedder.embed(doc.raw_text)
        decision = index.check(vector, embedder.provider_id)
        if decision.is_duplicate:
            duplicates += 1
            logger.info("discarding %s: duplicate of %s (%.4f)",
                        doc.doc_id[:12], decision.duplicate_of[:12], decision.similarity)
            continue
        try:
            index.insert(doc.doc_id, vector, embedder.provider_id)
        except DuplicateEntryError:
            duplicates += 1
            continue
        seen_ids.add(doc.doc_id)
        try:
            store.put_raw(doc)
        except DuplicateIdError:
            pass  # stored by an earlier interrupted run
        queued.append(doc)

    def validate_one(doc: RawDocument):
        return validate(doc, schema, provider, embedder, config.validation, config.prompt)

    outcomes = []
    if config.workers == 1:
        for doc in queued:
            outcomes.append(validate_one(doc))
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(validate_one, doc) for doc in queued]
            outcomes = [future.result() for future in futures]

    accepted = manual_review = reprocess = 0
    total_tokens = total_latency = total_calls = 0
    for doc, (record, report) in zip(queued, outcomes):
        total_tokens += report.cost.total_tokens
        total_latency += report.cost.total_latency_ms
        total_calls += report.cost.calls
        store.put_report(doc.doc_id, report_to_dict(report))
        if report.verdict == "accepted":
            accepted += 1
            normalized = NormalizedRecord(
                doc_id=doc.doc_id,
                schema_id=schema.schema_id,
                schema_version=schema.version,
                fields=record.fields,
                provenance=record.provenance,
                accepted_at=now_iso,
            )
            try:
                store.put_normalized(normalized)
            except DuplicateIdError:
                logger.info("normalized record already present for %s", doc.doc_id[:12])
        elif report.verdict == "manual_review":
            manual_review += 1
            if record is not None:
                item = ReviewItem(
                    doc_id=doc.doc_id,
                    candidate=_candidate_to_dict(record),
                    report=report_to_dict(report),
                )
                try:
                    store.put_review(item)
                except DuplicateIdError:
                    logger.info("review item already present for %s", doc.doc_id[:12])
        else:
            reprocess += 1

    index.save(sidecar)
    store.close()

    processed = len(queued)
    stats = {
        "documents_fetched": fetched,
        "documents_extracted": len(documents),
        "extraction_failures": extraction_failures,
        "duplicates_discarded": duplicates,
        "documents_processed": processed,
        "accepted": accepted,
        "manual_review": manual_review,
        "reprocess": reprocess,
        "accepted_rate": accepted / processed if processed else 0.0,
        "flagged_rate": manual_review / processed if processed else 0.0,
        "llm_calls": total_calls,
        "total_tokens": total_tokens,
        "total_latency_ms": total_latency,
        "mean_tokens_per_object": total_tokens / processed if processed else 0.0,
        "mean_latency_ms_per_object": total_latency / processed if processed else 0.0,
        "skips": [
            {"source_id": s.source_id, "locator": s.locator, "reason": s.reason}
            for s in fetcher.skip_log
        ],
    }
    document_errors = len(fetcher.skip_log) + reprocess
    return RunOutcome(stats=stats, document_errors=document_errors)
