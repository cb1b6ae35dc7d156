"""Target record shapes and the formal rule checks applied to extracted records.

A schema lists the fields a record must carry, how each is typed and
compared, and the per-field importance weights used by the weighted
field-level F-score. Schemas are immutable after load and safe to share
across pipeline workers; every operation here is pure.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .normalize import (
    DEFAULT_TIMESTAMP_LAYOUT,
    matches_timestamp_layout,
    parse_number,
)

FIELD_KINDS = ("text", "timestamp", "number", "category", "identifier")
COMPARISONS = ("exact", "numeric_tolerance", "semantic")
VIOLATION_CODES = (
    "missing_required",
    "type_mismatch",
    "format_mismatch",
    "value_not_allowed",
    "unknown_field",
)

# Sentinel field name for violations that concern the record as a whole.
DOCUMENT_FIELD = "(document)"


class SchemaError(ValueError):
    """Malformed schema document or violated schema invariant."""


@dataclass(frozen=True)
class FieldSpec:
    """One target field: its kind, flags, comparison mode and constraints."""

    name: str
    kind: str
    required: bool = False
    critical: bool = False
    comparison: str = "exact"
    format_pattern: str | None = None
    allowed_values: tuple[str, ...] | None = None
    weight: float = 1.0

    def __post_init__(self):
        if not self.name:
            raise SchemaError("field name must be non-empty")
        if self.kind not in FIELD_KINDS:
            raise SchemaError(f"field {self.name!r}: unknown kind {self.kind!r}")
        if self.comparison not in COMPARISONS:
            raise SchemaError(f"field {self.name!r}: unknown comparison {self.comparison!r}")
        if self.comparison == "numeric_tolerance" and self.kind != "number":
            raise SchemaError(
                f"field {self.name!r}: numeric_tolerance comparison requires kind=number"
            )
        if self.allowed_values is not None:
            if len(self.allowed_values) == 0:
                raise SchemaError(f"field {self.name!r}: allowed_values must be non-empty")
            object.__setattr__(self, "allowed_values", tuple(sorted(self.allowed_values)))
        if self.critical and not self.required:
            raise SchemaError(f"field {self.name!r}: critical fields must be required")
        if self.weight < 0:
            raise SchemaError(f"field {self.name!r}: weight must be >= 0")


@dataclass(frozen=True)
class PromptExample:
    """Optional worked example shipped with a schema for prompt assembly."""

    input_text: str
    record: dict


@dataclass(frozen=True)
class ExtractionSchema:
    """Ordered field list plus weights; validated on construction."""

    schema_id: str
    version: int
    fields: tuple[FieldSpec, ...]
    example: PromptExample | None = None

    def __post_init__(self):
        if not self.schema_id:
            raise SchemaError("schema_id must be non-empty")
        if self.version < 0:
            raise SchemaError("version must be a non-negative integer")
        names = [f.name for f in self.fields]
        if len(names) != len(set(names)):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate field names: {', '.join(dupes)}")
        if not any(f.required for f in self.fields):
            raise SchemaError("at least one field must be required")
        if sum(f.weight for f in self.fields) <= 0:
            raise SchemaError("sum of field weights must be > 0")

    @property
    def field_weights(self) -> dict[str, float]:
        return {f.name: f.weight for f in self.fields}

    @property
    def field_map(self) -> dict[str, FieldSpec]:
        return {f.name: f for f in self.fields}

    def field(self, name: str) -> FieldSpec:
        return self.field_map[name]


@dataclass(frozen=True)
class RuleViolation:
    """One formal rule failure; violations are data, never exceptions."""

    field: str
    code: str
    detail: str

    def __post_init__(self):
        if self.code not in VIOLATION_CODES:
            raise ValueError(f"unknown violation code {self.code!r}")


def _check_type(spec: FieldSpec, value) -> RuleViolation | None:
    if isinstance(value, (list, dict)):
        return RuleViolation(
            spec.name, "type_mismatch", f"expected a scalar {spec.kind}, got {type(value).__name__}"
        )
    if spec.kind == "number":
        if parse_number(value) is None:
            return RuleViolation(spec.name, "type_mismatch", f"not a number: {value!r}")
        return None
    if not isinstance(value, str):
        return RuleViolation(
            spec.name, "type_mismatch", f"expected {spec.kind} string, got {type(value).__name__}"
        )
    if spec.kind == "identifier" and not value.strip():
        return RuleViolation(spec.name, "type_mismatch", "identifier must be non-empty")
    return None


def _check_format(spec: FieldSpec, value) -> RuleViolation | None:
    if spec.kind == "timestamp":
        layout = spec.format_pattern or DEFAULT_TIMESTAMP_LAYOUT
        if not matches_timestamp_layout(value, layout):
            return RuleViolation(
                spec.name, "format_mismatch", f"{value!r} does not match layout {layout!r}"
            )
        return None
    if spec.format_pattern and isinstance(value, str):
        if re.fullmatch(spec.format_pattern, value) is None:
            return RuleViolation(
                spec.name,
                "format_mismatch",
                f"{value!r} does not match pattern {spec.format_pattern!r}",
            )
    return None


def validate_record(schema: ExtractionSchema, record: dict) -> list[RuleViolation]:
    """Check a parsed field map against the schema.

    Pure and deterministic: violations come out in schema field order, then
    unknown-field violations sorted by name. An empty list means the record
    satisfies every field constraint. None values count as missing.
    """
    violations: list[RuleViolation] = []
    for spec in schema.fields:
        value = record.get(spec.name)
        if value is None:
            if spec.required:
                violations.append(
                    RuleViolation(spec.name, "missing_required", "required field is missing")
                )
            continue
        violation = _check_type(spec, value)
        if violation is not None:
            violations.append(violation)
            continue
        violation = _check_format(spec, value)
        if violation is not None:
            violations.append(violation)
            continue
        if spec.allowed_values is not None and value not in spec.allowed_values:
            violations.append(
                RuleViolation(
                    spec.name,
                    "value_not_allowed",
                    f"{value!r} not in {{{', '.join(spec.allowed_values)}}}",
                )
            )
    known = set(schema.field_map)
    for name in sorted(k for k in record if k not in known):
        violations.append(
            RuleViolation(name, "unknown_field", "field is not part of the schema")
        )
    return violations


def _field_from_dict(raw: dict) -> FieldSpec:
    allowed = raw.get("allowed_values")
    return FieldSpec(
        name=raw.get("name", ""),
        kind=raw.get("kind", ""),
        required=bool(raw.get("required", False)),
        critical=bool(raw.get("critical", False)),
        comparison=raw.get("comparison", "exact"),
        format_pattern=raw.get("format_pattern"),
        allowed_values=tuple(allowed) if allowed is not None else None,
        weight=float(raw.get("weight", 1.0)),
    )


def load_schema(text: str) -> ExtractionSchema:
    """Parse a serialized schema document; raises SchemaError with position info."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(
            f"schema parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(raw, dict):
        raise SchemaError("schema document must be a JSON object")
    for key in ("schema_id", "version", "fields"):
        if key not in raw:
            raise SchemaError(f"schema document missing {key!r}")
    if not isinstance(raw["fields"], list):
        raise SchemaError("fields must be a list")
    fields = tuple(_field_from_dict(f) for f in raw["fields"])
    example = None
    if raw.get("example") is not None:
        ex = raw["example"]
        if not isinstance(ex, dict) or "input" not in ex or "record" not in ex:
            raise SchemaError("example block must carry 'input' and 'record'")
        example = PromptExample(input_text=ex["input"], record=dict(ex["record"]))
    return ExtractionSchema(
        schema_id=str(raw["schema_id"]),
        version=int(raw["version"]),
        fields=fields,
        example=example,
    )


def load_schema_file(path: str | Path) -> ExtractionSchema:
    return load_schema(Path(path).read_text(encoding="utf-8"))


def dump_schema(schema: ExtractionSchema) -> str:
    """Serialize to the canonical schema file form; load(dump(s)) == s."""
    fields = []
    for f in schema.fields:
        entry: dict = {
            "name": f.name,
            "kind": f.kind,
            "required": f.required,
            "critical": f.critical,
            "comparison": f.comparison,
            "weight": f.weight,
        }
        if f.format_pattern is not None:
            entry["format_pattern"] = f.format_pattern
        if f.allowed_values is not None:
            entry["allowed_values"] = list(f.allowed_values)
        fields.append(entry)
    doc: dict = {"schema_id": schema.schema_id, "version": schema.version, "fields": fields}
    if schema.example is not None:
        doc["example"] = {"input": schema.example.input_text, "record": schema.example.record}
    return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"
