"""Two-stage record validation: self-consistency, then rule checks.

Stage one generates a reference record and K lower-temperature replicas
for the same document and compares them field by field: semantic fields by
embedding similarity, exact and numeric fields by equality after
normalization. Stage two runs the schema's rule checks on the reference
record. A record is accepted only when both stages are clean; consistency
failures go to manual review, transient and parse failures to reprocess.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from decimal import Decimal

from .embedding import EmbeddingError, EmbeddingProvider, cosine_similarity
from .ingest import RawDocument
from .normalize import parse_number
from .schema import ExtractionSchema, FieldSpec, RuleViolation, validate_record
from .structurer import (
    CandidateRecord,
    LlmProvider,
    PromptConfig,
    ProviderExhaustedError,
    UnparseableOutputError,
    generate_candidate,
)

logger = logging.getLogger(__name__)

VERDICTS = ("accepted", "reprocess", "manual_review")

DEFAULT_FIELD_SIMILARITY_THRESHOLD = 0.85
DEFAULT_NUMERIC_TOLERANCE = 0.005
NUMERIC_TOLERANCE_EPSILON = 1e-9


@dataclass(frozen=True)
class ValidationConfig:
    num_replicas: int = 2
    reference_temperature: float = 0.7
    replica_temperature: float = 0.1
    field_similarity_threshold: float = DEFAULT_FIELD_SIMILARITY_THRESHOLD
    structural_check: bool = True
    numeric_tolerance: float = DEFAULT_NUMERIC_TOLERANCE
    field_thresholds: dict = field(default_factory=dict)
    retry_budget: int = 3

    def __post_init__(self):
        if self.num_replicas < 0:
            raise ValueError("num_replicas must be >= 0")
        if self.replica_temperature > self.reference_temperature:
            raise ValueError("replica_temperature must not exceed reference_temperature")
        if not (0.0 < self.field_similarity_threshold <= 1.0):
            raise ValueError("field_similarity_threshold must be in (0, 1]")

    def threshold_for(self, field_name: str) -> float:
        return self.field_thresholds.get(field_name, self.field_similarity_threshold)


@dataclass(frozen=True)
class PerFieldCheck:
    min_similarity: float | None
    structural_agreement: bool
    flagged: bool


@dataclass(frozen=True)
class ValidationCost:
    total_tokens: int = 0
    total_latency_ms: int = 0
    calls: int = 0


@dataclass(frozen=True)
class ValidationReport:
    doc_id: str
    per_field: dict
    rule_violations: tuple
    verdict: str
    flagged_fields: tuple
    cost: ValidationCost
    whole_record_min_similarity: float | None = None
    notes: tuple = ()


def _cost_of(responses) -> ValidationCost:
    return ValidationCost(
        total_tokens=sum(r.total_tokens for r in responses),
        total_latency_ms=sum(r.latency_ms for r in responses),
        calls=len(responses),
    )


def _text_similarity(a, b, embedder: EmbeddingProvider) -> float:
    """Cosine of the two values' embeddings; equality short-circuits to 1."""
    a_text, b_text = str(a), str(b)
    if a_text == b_text:
        return 1.0
    try:
        return cosine_similarity(embedder.embed(a_text), embedder.embed(b_text))
    except EmbeddingError:
        # One side has no tokens at all; unequal strings count as disjoint.
        return 0.0


def _numeric_agreement(reference, replica, tolerance: float) -> bool:
    ref_value = parse_number(reference)
    rep_value = parse_number(replica)
    if ref_value is None or rep_value is None:
        return str(reference) == str(replica)
    bound = Decimal(str(tolerance)) * max(abs(ref_value), Decimal(str(NUMERIC_TOLERANCE_EPSILON)))
    return abs(rep_value - ref_value) <= bound


def _check_field(
    spec: FieldSpec,
    reference_fields: dict,
    replica_fields: list,
    embedder: EmbeddingProvider,
    config: ValidationConfig,
) -> PerFieldCheck:
    ref_value = reference_fields.get(spec.name)
    min_similarity: float | None = None
    structural_agreement = True
    for fields in replica_fields:
        rep_value = fields.get(spec.name)
        if (ref_value is None) != (rep_value is None):
            structural_agreement = False
            continue
        if ref_value is None and rep_value is None:
            continue
        if spec.comparison == "semantic":
            similarity = _text_similarity(ref_value, rep_value, embedder)
            min_similarity = similarity if min_similarity is None else min(min_similarity, similarity)
        elif spec.comparison == "numeric_tolerance":
            if not _numeric_agreement(ref_value, rep_value, config.numeric_tolerance):
                structural_agreement = False
        else:
            if str(ref_value) != str(rep_value):
                structural_agreement = False
    if not config.structural_check:
        structural_agreement = True
    flagged = not structural_agreement
    if min_similarity is not None and min_similarity < config.threshold_for(spec.name):
        flagged = True
    return PerFieldCheck(min_similarity, structural_agreement, flagged)


def _whole_record_similarity(
    reference_fields: dict, replica_fields: list, embedder: EmbeddingProvider
) -> float | None:
    if not replica_fields:
        return None
    ref_text = json.dumps(reference_fields, sort_keys=True, ensure_ascii=False, default=str)
    minimum = None
    for fields in replica_fields:
        rep_text = json.dumps(fields, sort_keys=True, ensure_ascii=False, default=str)
        similarity = _text_similarity(ref_text, rep_text, embedder)
        minimum = similarity if minimum is None else min(minimum, similarity)
    return minimum


def validate(
    doc: RawDocument,
    schema: ExtractionSchema,
    provider: LlmProvider,
    embedder: EmbeddingProvider,
    config: ValidationConfig | None = None,
    prompt_config: PromptConfig | None = None,
) -> tuple[CandidateRecord | None, ValidationReport]:
    """Generate 1 + num_replicas records for doc and produce a verdict.

    The reference record is the one stored on acceptance; replicas are
    evidence only. Cost covers every response actually paid for, re-asks
    included.
    """
    config = config or ValidationConfig()
    responses = []

    def report(verdict, per_field=None, violations=(), flagged=(), whole=None, notes=()):
        return ValidationReport(
            doc_id=doc.doc_id,
            per_field=per_field or {},
            rule_violations=tuple(violations),
            verdict=verdict,
            flagged_fields=tuple(flagged),
            cost=_cost_of(responses),
            whole_record_min_similarity=whole,
            notes=tuple(notes),
        )

    try:
        reference = generate_candidate(
            provider,
            schema,
            doc,
            prompt_config,
            temperature=config.reference_temperature,
            variant_index=0,
            retry_budget=config.retry_budget,
        )
    except ProviderExhaustedError as exc:
        return None, report("reprocess", notes=(f"reference generation failed: {exc}",))
    except UnparseableOutputError as exc:
        responses.extend(exc.responses)
        stub = CandidateRecord(
            fields={},
            provenance={"doc_id": doc.doc_id, "model_id": "", "temperature": None},
            parse_repairs=("unparseable output",),
        )
        return stub, report("manual_review", notes=(f"reference unparseable: {exc}",))
    responses.extend(reference.responses)

    replica_fields: list = []
    for index in range(1, config.num_replicas + 1):
        try:
            replica = generate_candidate(
                provider,
                schema,
                doc,
                prompt_config,
                temperature=config.replica_temperature,
                variant_index=index,
                retry_budget=config.retry_budget,
            )
        except ProviderExhaustedError as exc:
            return reference.record, report(
                "reprocess", notes=(f"replica {index} generation failed: {exc}",)
            )
        except UnparseableOutputError as exc:
            responses.extend(exc.responses)
            return reference.record, report(
                "reprocess", notes=(f"replica {index} unparseable: {exc}",)
            )
        responses.extend(replica.responses)
        replica_fields.append(replica.record.fields)

    per_field = {
        spec.name: _check_field(spec, reference.record.fields, replica_fields, embedder, config)
        for spec in schema.fields
    }
    flagged = tuple(spec.name for spec in schema.fields if per_field[spec.name].flagged)
    violations = validate_record(schema, reference.record.fields)
    whole = _whole_record_similarity(reference.record.fields, replica_fields, embedder)
    verdict = "accepted" if not flagged and not violations else "manual_review"
    if verdict != "accepted":
        logger.debug("doc %s -> %s (flags=%s, violations=%d)", doc.doc_id, verdict, flagged, len(violations))
    return reference.record, report(verdict, per_field, violations, flagged, whole)


@dataclass(frozen=True)
class RunStats:
    accepted_rate: float
    flagged_rate: float
    mean_tokens_per_object: float
    mean_latency_ms: float


def aggregate_run_stats(reports: list) -> RunStats:
    """Arithmetic aggregates over a run's reports."""
    if not reports:
        raise ValueError("no reports to aggregate")
    n = len(reports)
    accepted = sum(1 for r in reports if r.verdict == "accepted")
    flagged = sum(1 for r in reports if r.flagged_fields)
    return RunStats(
        accepted_rate=accepted / n,
        flagged_rate=flagged / n,
        mean_tokens_per_object=sum(r.cost.total_tokens for r in reports) / n,
        mean_latency_ms=sum(r.cost.total_latency_ms for r in reports) / n,
    )


def violation_to_dict(violation: RuleViolation) -> dict:
    return {"field": violation.field, "code": violation.code, "detail": violation.detail}


def report_to_dict(report: ValidationReport) -> dict:
    """Stable-key-order rendering used by the store's report collection."""
    return {
        "doc_id": report.doc_id,
        "verdict": report.verdict,
        "flagged_fields": list(report.flagged_fields),
        "per_field": {
            name: {
                "min_similarity": check.min_similarity,
                "structural_agreement": check.structural_agreement,
                "flagged": check.flagged,
            }
            for name, check in report.per_field.items()
        },
        "rule_violations": [violation_to_dict(v) for v in report.rule_violations],
        "cost": {
            "total_tokens": report.cost.total_tokens,
            "total_latency_ms": report.cost.total_latency_ms,
            "calls": report.cost.calls,
        },
        "whole_record_min_similarity": report.whole_record_min_similarity,
        "notes": list(report.notes),
    }
