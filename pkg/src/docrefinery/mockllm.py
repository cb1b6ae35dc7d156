"""Deterministic, scriptable generation backend for offline testing.

Two modes compose: scripted documents return fixed outputs (or fail a set
number of times), and unscripted documents get a schema-conformant record
derived purely from (seed, document, variant). Field values are replaced
with invented ones at a configurable probability, so the validator's
behavior can be measured statistically without a real model.

Invented values come from a sentinel vocabulary disjoint from true values;
whether any given field value is invented stays decidable after the fact.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from decimal import Decimal
from pathlib import Path

from .normalize import DEFAULT_TIMESTAMP_LAYOUT, canonical_number
from .schema import ExtractionSchema, FieldSpec
from .structurer import LlmProvider, LlmRequest, LlmResponse, TransientProviderError

logger = logging.getLogger(__name__)

MOCK_MODEL_ID = "mock-llm"
SENTINEL_MARKER = "invented::"

DEFAULT_TOKENS_PER_CALL = 800
DEFAULT_LATENCY_PER_CALL_MS = 420

AGREEMENT_MODELS = ("independent", "correlated")

_MASK64 = (1 << 64) - 1

_TEXT_VOCAB = (
    "ledger", "sensor", "harbor", "signal", "meadow", "copper", "branch", "turbine",
    "anchor", "lantern", "quarry", "summit", "valley", "willow", "market", "garnet",
)

_EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


class _Prng:
    """splitmix64 stream; identical draw sequences on every platform."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state, value = _splitmix64(self._state)
        return value

    def next_float(self) -> float:
        return self.next_u64() / 2.0**64


def _derive_seed(*parts) -> int:
    payload = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")


@dataclass(frozen=True)
class MockConfig:
    seed: int = 0
    per_field_hallucination_prob: float = 0.0
    agreement_model: str = "independent"
    rho: float = 0.0
    tokens_per_call: int = DEFAULT_TOKENS_PER_CALL
    latency_per_call_ms: int = DEFAULT_LATENCY_PER_CALL_MS

    def __post_init__(self):
        if not (0.0 <= self.per_field_hallucination_prob <= 1.0):
            raise ValueError("per_field_hallucination_prob must be in [0, 1]")
        if self.agreement_model not in AGREEMENT_MODELS:
            raise ValueError(f"unknown agreement model: {self.agreement_model!r}")
        if not (0.0 <= self.rho <= 1.0):
            raise ValueError("rho must be in [0, 1]")


@dataclass
class ScriptEntry:
    """Fixed behavior for matching documents.

    match hits when it equals the request's doc_ref or occurs as a
    substring of the document text. Responses are consumed in order, the
    last one repeating; failures_before_success transient failures come
    first.
    """

    match: str
    responses: tuple = ()
    failures_before_success: int = 0

    def __post_init__(self):
        self.responses = tuple(self.responses)
        if not self.responses and self.failures_before_success <= 0:
            raise ValueError("script entry needs responses or failures_before_success > 0")


def load_scripts(path: str | Path) -> list[ScriptEntry]:
    """Read script entries from newline-delimited JSON."""
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        data = json.loads(line)
        entries.append(
            ScriptEntry(
                match=data["match"],
                responses=tuple(data.get("responses", ())),
                failures_before_success=int(data.get("failures_before_success", 0)),
            )
        )
    return entries


class MockProvider(LlmProvider):
    """In-process provider with a per-field hallucination injection model.

    Replicas (variant_index >= 1) either copy the reference variant's value
    per field (with probability rho under the correlated model) or draw
    their own hallucination flip; the independent model is correlated with
    rho = 0. Invented values are deterministic per (document, field), so
    two hallucinated variants of the same field agree with each other.
    """

    def __init__(
        self,
        config: MockConfig,
        schema: ExtractionSchema,
        scripts: list[ScriptEntry] | None = None,
    ):
        self.config = config
        self.schema = schema
        self.model_id = MOCK_MODEL_ID
        self._scripts = list(scripts or [])
        self._script_cursor: dict[int, int] = {}
        self._script_failures: dict[int, int] = {
            i: entry.failures_before_success for i, entry in enumerate(self._scripts)
        }
        self._lock = threading.Lock()
        self.invocations = 0
        self.calls_by_doc: dict[str, int] = {}

    # --- deterministic value model ---------------------------------------

    def _true_value(self, doc_ref: str, spec: FieldSpec) -> str:
        rng = _Prng(_derive_seed(self.config.seed, doc_ref, spec.name, "true"))
        return self._render_value(rng, spec, invented=False)

    def _invented_value(self, doc_ref: str, spec: FieldSpec) -> str:
        rng = _Prng(_derive_seed(self.config.seed, doc_ref, spec.name, "invented"))
        return self._render_value(rng, spec, invented=True)

    def _render_value(self, rng: _Prng, spec: FieldSpec, invented: bool) -> str:
        if spec.kind == "number":
            base = rng.next_u64() % 100000
            if invented:
                base = (base + 7919) % 100000
            return canonical_number(Decimal(base))
        if spec.kind == "timestamp":
            offset = int(rng.next_u64() % (365 * 24 * 3600))
            if invented:
                offset += 86400 * 400
            moment = _EPOCH + timedelta(seconds=offset)
            layout = spec.format_pattern
            if layout is None or layout == DEFAULT_TIMESTAMP_LAYOUT:
                return moment.isoformat()
            return moment.strftime(layout)
        if spec.kind == "category":
            values = spec.allowed_values or ("one", "two", "three")
            index = rng.next_u64() % len(values)
            if invented and len(values) > 1:
                index = (index + 1 + rng.next_u64() % (len(values) - 1)) % len(values)
            return values[index]
        if spec.kind == "identifier":
            token = f"{rng.next_u64():016x}"
            return f"{SENTINEL_MARKER}{token}" if invented else f"id-{token}"
        words = [_TEXT_VOCAB[rng.next_u64() % len(_TEXT_VOCAB)] for _ in range(3)]
        suffix = f"{rng.next_u64() % 0xFFFF:04x}"
        if invented:
            return f"{SENTINEL_MARKER}{'.'.join(words)}.{suffix}"
        return f"{' '.join(words)} {suffix}"

    def true_record(self, doc_ref: str) -> dict:
        """The grounded record for a document; the oracle for hallucination checks."""
        return {spec.name: self._true_value(doc_ref, spec) for spec in self.schema.fields}

    def is_invented(self, doc_ref: str, field_name: str, value) -> bool:
        spec = self.schema.field_map.get(field_name)
        if spec is None:
            return True
        return str(value) != self._true_value(doc_ref, spec)

    def _variant_flips(self, doc_ref: str, variant_index: int) -> dict:
        """Per-field (copy_reference, hallucinate) draws for one variant.

        Both draws always happen for every field so the stream stays
        aligned across agreement models and variants.
        """
        rng = _Prng(_derive_seed(self.config.seed, doc_ref, "variant", variant_index))
        flips = {}
        for spec in self.schema.fields:
            u_copy = rng.next_float()
            u_flip = rng.next_float()
            flips[spec.name] = (u_copy, u_flip)
        return flips

    def _variant_record(self, doc_ref: str, variant_index: int) -> dict:
        p = self.config.per_field_hallucination_prob
        rho = self.config.rho if self.config.agreement_model == "correlated" else 0.0
        flips = self._variant_flips(doc_ref, variant_index)
        reference_flips = flips if variant_index == 0 else self._variant_flips(doc_ref, 0)
        record = {}
        for spec in self.schema.fields:
            u_copy, u_flip = flips[spec.name]
            if variant_index > 0 and u_copy < rho:
                hallucinate = reference_flips[spec.name][1] < p
            else:
                hallucinate = u_flip < p
            value = (
                self._invented_value(doc_ref, spec)
                if hallucinate
                else self._true_value(doc_ref, spec)
            )
            record[spec.name] = value
        return record

    # --- provider contract -------------------------------------------------

    def _find_script(self, request: LlmRequest) -> int | None:
        for i, entry in enumerate(self._scripts):
            if entry.match == request.doc_ref or entry.match in request.document_text:
                return i
        return None

    def _scripted_response(self, index: int) -> str:
        entry = self._scripts[index]
        if self._script_failures[index] > 0:
            self._script_failures[index] -= 1
            raise TransientProviderError(f"scripted failure for {entry.match!r}")
        if not entry.responses:
            raise TransientProviderError(f"scripted permanent failure for {entry.match!r}")
        cursor = self._script_cursor.get(index, 0)
        text = entry.responses[min(cursor, len(entry.responses) - 1)]
        self._script_cursor[index] = cursor + 1
        return text

    def invoke_llm(self, request: LlmRequest) -> LlmResponse:
        with self._lock:
            self.invocations += 1
            self.calls_by_doc[request.doc_ref] = self.calls_by_doc.get(request.doc_ref, 0) + 1
            script_index = self._find_script(request)
            if script_index is not None:
                text = self._scripted_response(script_index)
            else:
                record = self._variant_record(request.doc_ref, request.variant_index)
                text = json.dumps(record, sort_keys=True, ensure_ascii=False)
        return LlmResponse(
            text=text,
            prompt_tokens=0,
            completion_tokens=self.config.tokens_per_call,
            latency_ms=self.config.latency_per_call_ms,
            model_id=self.model_id,
        )


def estimate_cost(config: MockConfig, num_calls: int, concurrent: bool = False) -> tuple[int, int]:
    """Predicted (tokens, latency_ms) for a call count under the cost model."""
    if num_calls < 0:
        raise ValueError("num_calls must be >= 0")
    tokens = config.tokens_per_call * num_calls
    if concurrent:
        latency = config.latency_per_call_ms if num_calls else 0
    else:
        latency = config.latency_per_call_ms * num_calls
    return tokens, latency
