"""Evaluation measures: semantic retention, field matching, and the
weighted field-level F-score with critical-error and hallucination rates.

Field matching honors each field's comparison mode: exact equality after
normalization, relative numeric tolerance, or embedding similarity. The
document-level rates count different things on purpose: the critical error
rate counts wrong critical values, the hallucination rate counts fields
filled in that the source document never contained, right or wrong.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

from .embedding import EmbeddingProvider, cosine_similarity
from .normalize import normalize_whitespace, parse_number
from .schema import ExtractionSchema, FieldSpec

logger = logging.getLogger(__name__)

DEFAULT_SEMANTIC_THRESHOLD = 0.85
DEFAULT_NUMERIC_TOLERANCE = 0.005
TOLERANCE_EPSILON = 1e-9


class MetricsError(ValueError):
    pass


class JoinError(MetricsError):
    """Predictions reference documents absent from the gold set."""

    def __init__(self, doc_ids):
        super().__init__(f"predictions without gold annotations: {sorted(doc_ids)}")
        self.doc_ids = tuple(sorted(doc_ids))


@dataclass(frozen=True)
class GoldAnnotation:
    """Reference field values plus which fields the source actually contains."""

    doc_id: str
    fields: dict
    present_fields: frozenset

    def __post_init__(self):
        object.__setattr__(self, "present_fields", frozenset(self.present_fields))
        missing = set(self.fields) - self.present_fields
        if missing:
            raise MetricsError(
                f"gold {self.doc_id}: annotated fields not in present_fields: {sorted(missing)}"
            )


@dataclass(frozen=True)
class EvalResult:
    weighted_f_score: float
    critical_error_rate: float
    hallucination_rate: float
    per_field_scores: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "weighted_f_score": self.weighted_f_score,
            "critical_error_rate": self.critical_error_rate,
            "hallucination_rate": self.hallucination_rate,
            "per_field_scores": self.per_field_scores,
        }


def semantic_retention(original: str, summary: str, embedder: EmbeddingProvider) -> float:
    """Cosine similarity between the embeddings of a text and its summary."""
    if not original.strip() or not summary.strip():
        raise MetricsError("semantic_retention requires non-empty texts")
    return cosine_similarity(embedder.embed(original), embedder.embed(summary))


def corpus_retention(pairs, embedder: EmbeddingProvider) -> float:
    """Arithmetic mean of per-pair retention over (original, summary) pairs."""
    values = [semantic_retention(original, summary, embedder) for original, summary in pairs]
    if not values:
        raise MetricsError("no pairs to average")
    return sum(values) / len(values)


def field_match(
    spec: FieldSpec,
    predicted,
    reference,
    embedder: EmbeddingProvider,
    semantic_threshold: float = DEFAULT_SEMANTIC_THRESHOLD,
    numeric_tolerance: float = DEFAULT_NUMERIC_TOLERANCE,
) -> bool:
    """Does the predicted value match the reference under the field's mode?"""
    if spec.comparison == "numeric_tolerance":
        predicted_value = parse_number(predicted)
        reference_value = parse_number(reference)
        if predicted_value is None or reference_value is None:
            return str(predicted).strip() == str(reference).strip()
        bound = Decimal(str(numeric_tolerance)) * max(
            abs(reference_value), Decimal(str(TOLERANCE_EPSILON))
        )
        return abs(predicted_value - reference_value) <= bound
    if spec.comparison == "semantic":
        predicted_text = normalize_whitespace(str(predicted))
        reference_text = normalize_whitespace(str(reference))
        if predicted_text == reference_text:
            return True
        if not predicted_text or not reference_text:
            return False
        similarity = cosine_similarity(
            embedder.embed(predicted_text), embedder.embed(reference_text)
        )
        return similarity >= semantic_threshold
    # exact: string equality after per-kind normalization
    if spec.kind == "number":
        predicted_value = parse_number(predicted)
        reference_value = parse_number(reference)
        if predicted_value is not None and reference_value is not None:
            return predicted_value == reference_value
    return normalize_whitespace(str(predicted)).strip() == normalize_whitespace(str(reference)).strip()


def _is_present(fields: dict, name: str) -> bool:
    return fields.get(name) is not None


def evaluate(
    predictions,
    gold,
    schema: ExtractionSchema,
    embedder: EmbeddingProvider,
    semantic_threshold: float = DEFAULT_SEMANTIC_THRESHOLD,
    numeric_tolerance: float = DEFAULT_NUMERIC_TOLERANCE,
) -> EvalResult:
    """Score predictions against gold annotations over one schema.

    predictions: iterable of (doc_id, field map) pairs or dicts with
    doc_id/fields keys. Gold documents with no prediction count as empty
    predictions; predictions without gold are a join error.
    """
    pred_by_doc: dict[str, dict] = {}
    for entry in predictions:
        if isinstance(entry, dict):
            doc_id, fields = entry["doc_id"], entry.get("fields", {})
        else:
            doc_id, fields = entry
        pred_by_doc[doc_id] = fields or {}
    gold_by_doc = {annotation.doc_id: annotation for annotation in gold}
    if not gold_by_doc:
        raise MetricsError("gold set is empty")
    unmatched = set(pred_by_doc) - set(gold_by_doc)
    if unmatched:
        raise JoinError(unmatched)

    counts = {spec.name: {"tp": 0, "fp": 0, "fn": 0} for spec in schema.fields}
    critical_error_docs = 0
    hallucination_docs = 0

    for doc_id in sorted(gold_by_doc):
        annotation = gold_by_doc[doc_id]
        predicted_fields = pred_by_doc.get(doc_id, {})
        critical_error = False
        hallucinated = any(
            _is_present(predicted_fields, name)
            for name in predicted_fields
            if name not in annotation.present_fields
        )
        for spec in schema.fields:
            has_pred = _is_present(predicted_fields, spec.name)
            has_ref = _is_present(annotation.fields, spec.name)
            matched = False
            if has_pred and has_ref:
                matched = field_match(
                    spec,
                    predicted_fields[spec.name],
                    annotation.fields[spec.name],
                    embedder,
                    semantic_threshold,
                    numeric_tolerance,
                )
            tally = counts[spec.name]
            if has_pred and has_ref and matched:
                tally["tp"] += 1
            else:
                if has_pred:
                    tally["fp"] += 1
                if has_ref:
                    tally["fn"] += 1
            if spec.critical:
                wrong_value = has_ref and not (has_pred and matched)
                invented = has_pred and not has_ref
                if wrong_value or invented:
                    critical_error = True
        if critical_error:
            critical_error_docs += 1
        if hallucinated:
            hallucination_docs += 1

    per_field_scores: dict[str, dict] = {}
    weighted_sum = 0.0
    weight_total = 0.0
    for spec in schema.fields:
        tally = counts[spec.name]
        tp, fp, fn = tally["tp"], tally["fp"], tally["fn"]
        if tp + fp + fn == 0:
            continue  # field has no support in either set; excluded from the average
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f_score = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_field_scores[spec.name] = {
            "precision": precision,
            "recall": recall,
            "f_score": f_score,
            "tp": tp,
            "fp": fp,
            "fn": fn,
        }
        weighted_sum += spec.weight * f_score
        weight_total += spec.weight
    n_docs = len(gold_by_doc)
    return EvalResult(
        weighted_f_score=weighted_sum / weight_total if weight_total else 0.0,
        critical_error_rate=critical_error_docs / n_docs,
        hallucination_rate=hallucination_docs / n_docs,
        per_field_scores=per_field_scores,
    )


def load_gold_file(path) -> list[GoldAnnotation]:
    """Read gold annotations from newline-delimited JSON."""
    annotations = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        data = json.loads(line)
        annotations.append(
            GoldAnnotation(
                doc_id=data["doc_id"],
                fields=data.get("fields", {}),
                present_fields=frozenset(data.get("present_fields", data.get("fields", {}).keys())),
            )
        )
    return annotations
