"""Replica-consensus validation: verdicts, flags, and cost accounting."""

import json

import pytest

from docrefinery.embedding import cosine_similarity
from docrefinery.mockllm import MockConfig, MockProvider, ScriptEntry
from docrefinery.schema import ExtractionSchema, FieldSpec
from docrefinery.structurer import LlmProvider, LlmRequest, LlmResponse
from docrefinery.validator import (
    ValidationConfig,
    aggregate_run_stats,
    report_to_dict,
    validate,
)

from conftest import make_doc


class RecordingProvider(LlmProvider):
    """Pass-through wrapper that captures every request."""

    def __init__(self, inner):
        self.inner = inner
        self.model_id = inner.model_id
        self.requests: list[LlmRequest] = []

    def invoke_llm(self, request: LlmRequest) -> LlmResponse:
        self.requests.append(request)
        return self.inner.invoke_llm(request)


def scripted_provider(schema, doc, responses, **config_kw):
    entry = ScriptEntry(match=doc.doc_id, responses=tuple(responses))
    return MockProvider(MockConfig(**config_kw), schema, scripts=[entry])


def note_json(summary, event_id="E7"):
    return json.dumps({"summary": summary, "event id": event_id})


AMOUNT_SCHEMA = ExtractionSchema(
    "amounts",
    1,
    (
        FieldSpec(
            name="amount", kind="number", required=True, comparison="numeric_tolerance"
        ),
    ),
)


class TestConfigInvariants:
    def test_replica_temperature_capped_by_reference(self):
        with pytest.raises(ValueError):
            ValidationConfig(reference_temperature=0.1, replica_temperature=0.7)

    def test_replica_count_non_negative(self):
        with pytest.raises(ValueError):
            ValidationConfig(num_replicas=-1)

    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            ValidationConfig(field_similarity_threshold=0.0)
        with pytest.raises(ValueError):
            ValidationConfig(field_similarity_threshold=1.2)

    def test_per_field_threshold_fallback(self):
        config = ValidationConfig(field_thresholds={"summary": 0.9})
        assert config.threshold_for("summary") == 0.9
        assert config.threshold_for("other") == 0.85


class TestCallPattern:
    def test_zero_replicas_costs_one_call(self, note_schema, embedder):
        doc = make_doc()
        provider = MockProvider(MockConfig(seed=1), note_schema)
        record, report = validate(
            doc, note_schema, provider, embedder, ValidationConfig(num_replicas=0)
        )
        assert report.verdict == "accepted"
        assert report.cost.calls == 1
        assert provider.invocations == 1
        assert report.whole_record_min_similarity is None

    def test_k_replicas_cost_k_plus_one_calls(self, note_schema, embedder):
        doc = make_doc()
        provider = MockProvider(MockConfig(seed=1), note_schema)
        _, report = validate(
            doc, note_schema, provider, embedder, ValidationConfig(num_replicas=2)
        )
        assert report.cost.calls == 3
        assert provider.invocations == 3
        assert report.cost.total_tokens == 3 * 800
        assert report.cost.total_latency_ms == 3 * 420

    def test_reference_and_replica_temperatures(self, note_schema, embedder):
        doc = make_doc()
        provider = RecordingProvider(MockProvider(MockConfig(seed=1), note_schema))
        validate(doc, note_schema, provider, embedder, ValidationConfig(num_replicas=2))
        assert [r.temperature for r in provider.requests] == [0.7, 0.1, 0.1]
        assert [r.variant_index for r in provider.requests] == [0, 1, 2]


class TestVerdicts:
    def test_full_agreement_accepted(self, note_schema, embedder):
        doc = make_doc()
        text = note_json("the payment gateway timed out after three retries")
        provider = scripted_provider(note_schema, doc, [text, text, text])
        record, report = validate(
            doc, note_schema, provider, embedder, ValidationConfig(num_replicas=2)
        )
        assert report.verdict == "accepted"
        assert report.flagged_fields == ()
        assert record.fields["event id"] == "E7"
        assert report.per_field["summary"].min_similarity == 1.0

    def test_semantic_divergence_flags_field(self, note_schema, embedder):
        doc = make_doc()
        provider = scripted_provider(
            note_schema,
            doc,
            [
                note_json("the payment gateway timed out after three retries"),
                note_json("quarterly revenue grew nine percent on strong exports"),
            ],
        )
        _, report = validate(
            doc, note_schema, provider, embedder, ValidationConfig(num_replicas=1)
        )
        assert report.verdict == "manual_review"
        assert "summary" in report.flagged_fields
        assert report.per_field["summary"].min_similarity < 0.85

    def test_exact_field_divergence_flags_field(self, note_schema, embedder):
        doc = make_doc()
        summary = "the payment gateway timed out after three retries"
        provider = scripted_provider(
            note_schema,
            doc,
            [note_json(summary, "E7"), note_json(summary, "E8")],
        )
        _, report = validate(
            doc, note_schema, provider, embedder, ValidationConfig(num_replicas=1)
        )
        assert report.verdict == "manual_review"
        assert report.flagged_fields == ("event id",)
        assert not report.per_field["event id"].structural_agreement

    def test_presence_mismatch_is_structural_disagreement(self, note_schema, embedder):
        doc = make_doc()
        summary = "the payment gateway timed out after three retries"
        provider = scripted_provider(
            note_schema,
            doc,
            [note_json(summary), json.dumps({"summary": summary, "event id": None})],
        )
        _, report = validate(
            doc, note_schema, provider, embedder, ValidationConfig(num_replicas=1)
        )
        assert "event id" in report.flagged_fields
        assert not report.per_field["event id"].structural_agreement

    def test_rule_violation_forces_review_despite_agreement(self, note_schema, embedder):
        doc = make_doc()
        # All variants agree, but the record is missing a required field.
        text = json.dumps({"summary": "stable summary text"})
        provider = scripted_provider(note_schema, doc, [text, text])
        record, report = validate(
            doc, note_schema, provider, embedder, ValidationConfig(num_replicas=1)
        )
        assert report.verdict == "manual_review"
        assert report.flagged_fields == ()
        assert any(v.code == "missing_required" for v in report.rule_violations)

    def test_agreeing_nulls_are_not_divergence(self, log_schema, embedder):
        doc = make_doc()
        record = {
            "time stamp": "2025-06-01T08:00:00+00:00",
            "severity level": "ERROR",
            "service name": "checkout",
            "error code": "E1",
            "error message": "gateway timeout on checkout",
            "root cause": None,
            "recommended action": None,
        }
        text = json.dumps(record)
        provider = scripted_provider(log_schema, doc, [text, text])
        _, report = validate(
            doc, log_schema, provider, embedder, ValidationConfig(num_replicas=1)
        )
        assert report.verdict == "accepted"


class TestNumericTolerance:
    def run(self, embedder, ref, rep):
        doc = make_doc()
        provider = scripted_provider(
            AMOUNT_SCHEMA,
            doc,
            [json.dumps({"amount": ref}), json.dumps({"amount": rep})],
        )
        _, report = validate(
            doc, AMOUNT_SCHEMA, provider, embedder, ValidationConfig(num_replicas=1)
        )
        return report

    def test_within_half_percent_agrees(self, embedder):
        report = self.run(embedder, "1000", "1004")
        assert report.verdict == "accepted"
        assert report.per_field["amount"].structural_agreement

    def test_outside_half_percent_disagrees(self, embedder):
        report = self.run(embedder, "1000", "1006")
        assert report.verdict == "manual_review"
        assert report.flagged_fields == ("amount",)

    def test_boundary_value_agrees(self, embedder):
        # |1005 - 1000| == 0.005 * 1000 exactly; the bound is inclusive.
        report = self.run(embedder, "1000", "1005")
        assert report.verdict == "accepted"


class TestThresholdSweep:
    def test_flagging_is_monotone_in_threshold(self, note_schema, embedder):
        base = "the payment gateway timed out after three retries on checkout"
        variant = "the payment gateway timed out after several retries on checkout"
        similarity = cosine_similarity(embedder.embed(base), embedder.embed(variant))
        assert 0.5 < similarity < 1.0

        def verdict_at(threshold):
            doc = make_doc()
            provider = scripted_provider(
                note_schema, doc, [note_json(base), note_json(variant)]
            )
            _, report = validate(
                doc,
                note_schema,
                provider,
                embedder,
                ValidationConfig(num_replicas=1, field_similarity_threshold=threshold),
            )
            return report.verdict

        assert verdict_at(round(similarity - 0.02, 6)) == "accepted"
        assert verdict_at(round(similarity + 0.02, 6)) == "manual_review"

    def test_structural_check_can_be_disabled(self, note_schema, embedder):
        doc = make_doc()
        summary = "the payment gateway timed out after three retries"
        provider = scripted_provider(
            note_schema, doc, [note_json(summary, "E7"), note_json(summary, "E8")]
        )
        _, report = validate(
            doc,
            note_schema,
            provider,
            embedder,
            ValidationConfig(num_replicas=1, structural_check=False),
        )
        assert report.verdict == "accepted"


class TestFailurePaths:
    def test_provider_exhaustion_is_reprocess(self, note_schema, embedder):
        doc = make_doc()
        entry = ScriptEntry(match=doc.doc_id, responses=(), failures_before_success=99)
        provider = MockProvider(MockConfig(), note_schema, scripts=[entry])
        record, report = validate(
            doc, note_schema, provider, embedder, ValidationConfig(num_replicas=1, retry_budget=2)
        )
        assert record is None
        assert report.verdict == "reprocess"
        assert report.cost.calls == 0

    def test_unparseable_reference_is_manual_review_stub(self, note_schema, embedder):
        doc = make_doc()
        provider = scripted_provider(note_schema, doc, ["not json", "still not json"])
        record, report = validate(
            doc, note_schema, provider, embedder, ValidationConfig(num_replicas=1)
        )
        assert report.verdict == "manual_review"
        assert record.fields == {}
        assert record.parse_repairs == ("unparseable output",)
        # Both the failed answer and the failed re-ask were paid for.
        assert report.cost.calls == 2
        assert report.cost.total_tokens == 1600

    def test_unparseable_replica_is_reprocess(self, note_schema, embedder):
        doc = make_doc()
        good = note_json("stable summary text")
        provider = scripted_provider(note_schema, doc, [good, "garbage", "garbage"])
        record, report = validate(
            doc, note_schema, provider, embedder, ValidationConfig(num_replicas=1)
        )
        assert report.verdict == "reprocess"
        assert record is not None
        assert report.cost.calls == 3

    def test_transient_failures_paid_and_recovered(self, note_schema, embedder):
        doc = make_doc()
        good = note_json("stable summary text")
        entry = ScriptEntry(match=doc.doc_id, responses=(good,), failures_before_success=2)
        provider = MockProvider(MockConfig(), note_schema, scripts=[entry])
        record, report = validate(
            doc, note_schema, provider, embedder, ValidationConfig(num_replicas=0, retry_budget=3)
        )
        assert report.verdict == "accepted"
        # Failed attempts produced no responses; only the answer is costed.
        assert report.cost.calls == 1


class TestAggregation:
    def test_run_stats_means(self, note_schema, embedder):
        reports = []
        for index, replicas in enumerate((0, 1)):
            doc = make_doc(index)
            provider = MockProvider(MockConfig(seed=2), note_schema)
            _, report = validate(
                doc, note_schema, provider, embedder, ValidationConfig(num_replicas=replicas)
            )
            reports.append(report)
        stats = aggregate_run_stats(reports)
        assert stats.accepted_rate == 1.0
        assert stats.flagged_rate == 0.0
        assert stats.mean_tokens_per_object == (800 + 1600) / 2
        assert stats.mean_latency_ms == (420 + 840) / 2

    def test_flagged_rate_counts_reports_with_flags(self, note_schema, embedder):
        doc = make_doc()
        provider = scripted_provider(
            note_schema,
            doc,
            [
                note_json("payment gateway timeout on checkout", "E7"),
                note_json("payment gateway timeout on checkout", "E8"),
            ],
        )
        _, flagged_report = validate(
            doc, note_schema, provider, embedder, ValidationConfig(num_replicas=1)
        )
        stats = aggregate_run_stats([flagged_report])
        assert stats.accepted_rate == 0.0
        assert stats.flagged_rate == 1.0

    def test_empty_aggregate_rejected(self):
        with pytest.raises(ValueError):
            aggregate_run_stats([])


class TestReportSerialization:
    def test_report_round_trips_through_json(self, note_schema, embedder):
        doc = make_doc()
        provider = MockProvider(MockConfig(seed=1), note_schema)
        _, report = validate(
            doc, note_schema, provider, embedder, ValidationConfig(num_replicas=1)
        )
        data = json.loads(json.dumps(report_to_dict(report)))
        assert data["doc_id"] == doc.doc_id
        assert data["verdict"] == "accepted"
        assert data["cost"]["calls"] == 2
        assert set(data["per_field"]) == {"summary", "event id"}
