"""Prompt assembly, LLM invocation and response parsing.

One call per document variant: the prompt carries instructions, a rendering
of the target schema, at most one worked example, processing rules and the
document text, truncated to fit the context budget. Responses are parsed
with a small repair ladder (fence stripping, object extraction, trailing
commas) and normalized field by field.
"""

from __future__ import annotations

import json
import logging
import math
import re
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace

import httpx

from .ingest import RawDocument
from .normalize import canonical_number, normalize_timestamp, normalize_whitespace, parse_number
from .schema import ExtractionSchema

logger = logging.getLogger(__name__)

DEFAULT_REFERENCE_TEMPERATURE = 0.7
DEFAULT_MAX_OUTPUT_TOKENS = 512
DEFAULT_CONTEXT_BUDGET_TOKENS = 4000
DEFAULT_RETRY_BUDGET = 3

SYSTEM_INSTRUCTIONS = (
    "You turn documents into structured records. "
    "Respond with exactly one JSON object and nothing else."
)

DEFAULT_RULES = (
    "Copy values from the document verbatim; never infer or invent a value.",
    "Use null for any field whose value is absent from the document.",
    "Render timestamps in the field's declared format.",
    "Do not add fields beyond the ones listed.",
)


class StructurerError(Exception):
    pass


class EmptyDocumentError(StructurerError):
    """Document text empty after truncation; nothing to extract from."""


class TransientProviderError(StructurerError):
    """Retryable provider failure (timeout, connection, 5xx)."""


class ProviderExhaustedError(StructurerError):
    """Transient failures exhausted the retry budget."""

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class UnparseableOutputError(StructurerError):
    """No structured object recoverable from the response, even after a re-ask."""

    def __init__(self, message: str, responses: list["LlmResponse"]):
        super().__init__(message)
        self.responses = responses


@dataclass(frozen=True)
class PromptConfig:
    temperature: float = DEFAULT_REFERENCE_TEMPERATURE
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    context_budget_tokens: int = DEFAULT_CONTEXT_BUDGET_TOKENS
    rules: tuple = DEFAULT_RULES


@dataclass(frozen=True)
class LlmRequest:
    """A fully rendered prompt plus generation parameters.

    doc_ref and variant_index identify the (document, variant) pair for
    providers whose behavior must be reproducible per call; they are not
    part of the rendered prompt.
    """

    system_instructions: str
    schema_rendering: str
    example_pairs: tuple
    rules: tuple
    document_text: str
    temperature: float
    max_output_tokens: int
    context_budget_tokens: int
    doc_ref: str = ""
    variant_index: int = 0
    document_truncated: bool = False

    def user_content(self) -> str:
        parts = [self.schema_rendering]
        for input_text, rendering in self.example_pairs:
            parts.append(f"Example input:\n{input_text}\nExample output:\n{rendering}")
        if self.rules:
            parts.append("Rules:\n" + "\n".join(f"- {rule}" for rule in self.rules))
        parts.append(f"Document:\n{self.document_text}")
        return "\n\n".join(parts)

    def messages(self) -> list[dict]:
        return [
            {"role": "system", "content": self.system_instructions},
            {"role": "user", "content": self.user_content()},
        ]

    def token_estimate(self) -> int:
        return estimate_tokens(self.system_instructions) + estimate_tokens(self.user_content())


@dataclass(frozen=True)
class LlmResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    latency_ms: int
    model_id: str

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass(frozen=True)
class CandidateRecord:
    """Parsed record plus where it came from and what repairs were applied."""

    fields: dict
    provenance: dict
    parse_repairs: tuple = ()


class LlmProvider(ABC):
    """Contract every generation backend implements; safe for concurrent calls."""

    model_id: str = "unknown"

    @abstractmethod
    def invoke_llm(self, request: LlmRequest) -> LlmResponse:
        """Run one generation. Raises TransientProviderError on retryable failure."""


def estimate_tokens(text: str) -> int:
    """Budget estimator: four characters per token, rounded up."""
    return math.ceil(len(text) / 4)


def render_schema(schema: ExtractionSchema) -> str:
    lines = [f"Target record fields (schema {schema.schema_id} v{schema.version}):"]
    for spec in schema.fields:
        requirement = "required" if spec.required else "optional"
        constraints = []
        if spec.format_pattern:
            constraints.append(f"format {spec.format_pattern}")
        if spec.allowed_values:
            constraints.append("one of " + ", ".join(spec.allowed_values))
        suffix = "; " + "; ".join(constraints) if constraints else ""
        lines.append(f"- {spec.name} ({spec.kind}, {requirement}{suffix})")
    return "\n".join(lines)


def build_prompt(
    schema: ExtractionSchema,
    doc: RawDocument,
    config: PromptConfig | None = None,
    temperature: float | None = None,
    variant_index: int = 0,
    extra_rules: tuple = (),
) -> LlmRequest:
    """Assemble the request, truncating the document tail to fit the budget."""
    config = config or PromptConfig()
    if not doc.raw_text:
        raise EmptyDocumentError(f"document {doc.doc_id} has no text")
    rules = tuple(config.rules) + tuple(extra_rules)
    examples = ()
    if schema.example is not None:
        rendering = json.dumps(schema.example.record, ensure_ascii=False, sort_keys=True)
        examples = ((schema.example.input_text, rendering),)

    def make(document_text: str, truncated: bool) -> LlmRequest:
        return LlmRequest(
            system_instructions=SYSTEM_INSTRUCTIONS,
            schema_rendering=render_schema(schema),
            example_pairs=examples,
            rules=rules,
            document_text=document_text,
            temperature=config.temperature if temperature is None else temperature,
            max_output_tokens=config.max_output_tokens,
            context_budget_tokens=config.context_budget_tokens,
            doc_ref=doc.doc_id,
            variant_index=variant_index,
            document_truncated=truncated,
        )

    request = make(doc.raw_text, False)
    if request.token_estimate() <= config.context_budget_tokens:
        return request
    overhead = replace(request, document_text="").token_estimate()
    allowed_chars = (config.context_budget_tokens - overhead) * 4
    if allowed_chars <= 0:
        raise EmptyDocumentError(
            f"document {doc.doc_id}: no room for document text within "
            f"{config.context_budget_tokens} tokens"
        )
    truncated = make(doc.raw_text[:allowed_chars], True)
    # The estimator is linear in characters, so the cut is exact; guard anyway.
    while truncated.token_estimate() > config.context_budget_tokens:
        allowed_chars -= 4
        if allowed_chars <= 0:
            raise EmptyDocumentError(f"document {doc.doc_id}: budget too small")
        truncated = make(doc.raw_text[:allowed_chars], True)
    logger.debug("truncated document %s to %d chars", doc.doc_id, allowed_chars)
    return truncated


@dataclass(frozen=True)
class InvokeResult:
    response: LlmResponse
    attempts: int


def invoke(provider: LlmProvider, request: LlmRequest, retry_budget: int = DEFAULT_RETRY_BUDGET) -> InvokeResult:
    """Call the provider, retrying transient failures up to retry_budget attempts."""
    last_error: Exception | None = None
    for attempt in range(1, retry_budget + 1):
        try:
            return InvokeResult(provider.invoke_llm(request), attempt)
        except TransientProviderError as exc:
            last_error = exc
            logger.debug("attempt %d/%d failed for %s: %s", attempt, retry_budget, request.doc_ref, exc)
    raise ProviderExhaustedError(
        f"provider failed after {retry_budget} attempts: {last_error}", retry_budget
    )


_FENCE_RE = re.compile(r"^\s*```[a-zA-Z0-9_-]*\s*\n(.*)\n\s*```\s*$", re.DOTALL)
_TRAILING_COMMA_RE = re.compile(r",(\s*[}\]])")


class ParseFailure(StructurerError):
    pass


def _try_load(text: str):
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        return None
    return value if isinstance(value, dict) else None


def parse_candidate(
    response: LlmResponse,
    schema: ExtractionSchema,
    request: LlmRequest | None = None,
) -> CandidateRecord:
    """Recover a field map from the response text, recording applied repairs.

    The repair ladder is fixed: fence stripping, outermost-object
    extraction, trailing-comma removal. Values are kept verbatim; nothing
    is defaulted in.
    """
    text = response.text
    repairs: list[str] = []
    fenced = _FENCE_RE.match(text)
    if fenced:
        text = fenced.group(1)
        repairs.append("stripped fences")
    parsed = _try_load(text)
    if parsed is None:
        start, end = text.find("{"), text.rfind("}")
        if start != -1 and end > start:
            candidate = text[start : end + 1]
            if candidate.strip() != text.strip():
                repairs.append("extracted object")
            parsed = _try_load(candidate)
            if parsed is None:
                repaired = _TRAILING_COMMA_RE.sub(r"\1", candidate)
                if repaired != candidate:
                    parsed = _try_load(repaired)
                    if parsed is not None:
                        repairs.append("removed trailing commas")
    if parsed is None:
        raise ParseFailure("no JSON object found in response")
    provenance = {
        "doc_id": request.doc_ref if request else "",
        "model_id": response.model_id,
        "temperature": request.temperature if request else None,
        "prompt_tokens": response.prompt_tokens,
        "completion_tokens": response.completion_tokens,
        "latency_ms": response.latency_ms,
    }
    return CandidateRecord(fields=parsed, provenance=provenance, parse_repairs=tuple(repairs))


def normalize_candidate(record: CandidateRecord, schema: ExtractionSchema) -> CandidateRecord:
    """Canonicalize values per field kind; unknown or odd values pass through.

    Idempotent: canonical forms are fixed points of every rule applied here.
    """
    field_map = schema.field_map
    normalized: dict = {}
    for name, value in record.fields.items():
        spec = field_map.get(name)
        if spec is None or value is None:
            normalized[name] = value
            continue
        if spec.kind == "number":
            parsed = parse_number(value)
            normalized[name] = canonical_number(parsed) if parsed is not None else value
        elif spec.kind == "timestamp" and isinstance(value, str):
            normalized[name] = normalize_timestamp(value, spec.format_pattern)
        elif spec.kind == "category" and isinstance(value, str) and spec.allowed_values:
            folded = value.strip()
            match = next((a for a in spec.allowed_values if a.casefold() == folded.casefold()), None)
            normalized[name] = match if match is not None else value
        elif spec.kind == "text" and isinstance(value, str):
            normalized[name] = normalize_whitespace(value)
        elif spec.kind == "identifier" and isinstance(value, str):
            normalized[name] = value.strip()
        else:
            normalized[name] = value
    return CandidateRecord(
        fields=normalized, provenance=record.provenance, parse_repairs=record.parse_repairs
    )


@dataclass(frozen=True)
class GenerationResult:
    record: CandidateRecord
    responses: tuple
    attempts: int


def generate_candidate(
    provider: LlmProvider,
    schema: ExtractionSchema,
    doc: RawDocument,
    config: PromptConfig | None = None,
    temperature: float | None = None,
    variant_index: int = 0,
    retry_budget: int = DEFAULT_RETRY_BUDGET,
) -> GenerationResult:
    """Prompt → invoke → parse → normalize, with one re-ask on parse failure.

    Raises ProviderExhaustedError when the provider never answers, and
    UnparseableOutputError (carrying the paid responses) when the re-ask
    also fails to parse.
    """
    request = build_prompt(schema, doc, config, temperature=temperature, variant_index=variant_index)
    result = invoke(provider, request, retry_budget)
    responses = [result.response]
    attempts = result.attempts
    try:
        record = parse_candidate(result.response, schema, request)
    except ParseFailure as first_error:
        retry_request = build_prompt(
            schema,
            doc,
            config,
            temperature=temperature,
            variant_index=variant_index,
            extra_rules=(
                f"The previous response could not be parsed ({first_error}). "
                "Respond with exactly one JSON object.",
            ),
        )
        retry_result = invoke(provider, retry_request, retry_budget)
        responses.append(retry_result.response)
        attempts += retry_result.attempts
        try:
            record = parse_candidate(retry_result.response, schema, retry_request)
        except ParseFailure as second_error:
            raise UnparseableOutputError(str(second_error), responses) from second_error
    record = normalize_candidate(record, schema)
    return GenerationResult(record=record, responses=tuple(responses), attempts=attempts)


class RemoteLlmProvider(LlmProvider):
    """Chat-style HTTP backend speaking the wire contract.

    Request: {model, temperature, max_tokens, messages:[{role, content}]}.
    Response: {text, usage:{prompt_tokens, completion_tokens}}.
    """

    def __init__(
        self,
        endpoint: str,
        model_id: str = "remote",
        client: httpx.Client | None = None,
        timeout: float = 60.0,
    ):
        self.endpoint = endpoint
        self.model_id = model_id
        self._client = client or httpx.Client(timeout=timeout)

    def invoke_llm(self, request: LlmRequest) -> LlmResponse:
        payload = {
            "model": self.model_id,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "messages": request.messages(),
        }
        started = time.monotonic()
        try:
            response = self._client.post(self.endpoint, json=payload)
        except httpx.HTTPError as exc:
            raise TransientProviderError(f"transport failure: {exc}") from exc
        if response.status_code >= 500:
            raise TransientProviderError(f"server error {response.status_code}")
        if response.status_code >= 400:
            raise StructurerError(f"provider rejected request: {response.status_code}")
        elapsed_ms = int((time.monotonic() - started) * 1000)
        body = response.json()
        usage = body.get("usage", {})
        return LlmResponse(
            text=body["text"],
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            latency_ms=elapsed_ms,
            model_id=self.model_id,
        )
