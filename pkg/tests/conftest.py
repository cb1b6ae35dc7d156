"""Shared fixtures: schemas, documents, and provider builders."""

import json
from pathlib import Path

import pytest

from docrefinery.embedding import HashedTfEmbedder
from docrefinery.ingest import RawDocument
from docrefinery.schema import ExtractionSchema, FieldSpec, load_schema_file

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture()
def embedder():
    return HashedTfEmbedder()


@pytest.fixture()
def log_schema() -> ExtractionSchema:
    """Seven-field structured-log schema used across the suite."""
    return load_schema_file(FIXTURES / "log_schema.json")


@pytest.fixture()
def note_schema() -> ExtractionSchema:
    """Small two-field schema: one semantic text field, one exact identifier."""
    return ExtractionSchema(
        schema_id="note",
        version=1,
        fields=(
            FieldSpec(name="summary", kind="text", required=True, comparison="semantic", weight=2.0),
            FieldSpec(name="event id", kind="identifier", required=True, critical=True),
        ),
    )


@pytest.fixture()
def text_only_schema() -> ExtractionSchema:
    """One required semantic text field; the shape used by the stat suites."""
    return ExtractionSchema(
        schema_id="text-only",
        version=1,
        fields=(FieldSpec(name="text", kind="text", required=True, comparison="semantic"),),
    )


def make_doc(index: int = 0, text: str | None = None, doc_id: str | None = None) -> RawDocument:
    return RawDocument(
        doc_id=doc_id or f"doc-{index:05d}",
        source_id="test-source",
        fetched_at="2025-06-01T00:00:00+00:00",
        locator=f"mem://{index}",
        content_kind="text",
        raw_text=text or f"synthetic document {index} body",
    )


def load_fixture_labels() -> dict:
    return json.loads((FIXTURES / "html" / "labels.json").read_text(encoding="utf-8"))


NOTE_SCHEMA_DICT = {
    "schema_id": "note",
    "version": 1,
    "fields": [
        {
            "name": "summary",
            "kind": "text",
            "required": True,
            "comparison": "semantic",
            "weight": 2.0,
        },
        {"name": "event id", "kind": "identifier", "required": True, "critical": True},
    ],
}

WORKSPACE_DOCS = {
    "a.txt": "Payment gateway timed out after three retries on the checkout path.",
    "b.txt": "Harbor dredging resumed on Monday after the winter storm season ended.",
    "c.txt": "The night bus pilot adds a corridor between the station and the campus.",
}


def make_workspace(tmp_path, docs=None, config_extra=None, name="config.json"):
    """Write a runnable config, source registry, schema, and corpus.

    Returns the config path. Relative paths inside the config resolve
    against tmp_path; extras merge one level deep.
    """
    docs_dir = tmp_path / "docs"
    docs_dir.mkdir(parents=True, exist_ok=True)
    for filename, text in (docs or WORKSPACE_DOCS).items():
        (docs_dir / filename).write_text(text, encoding="utf-8")
    sources = [{"source_id": "local", "kind": "file", "locator": str(docs_dir)}]
    (tmp_path / "sources.json").write_text(json.dumps(sources), encoding="utf-8")
    (tmp_path / "schema.json").write_text(json.dumps(NOTE_SCHEMA_DICT), encoding="utf-8")
    config = {
        "sources": "sources.json",
        "schema": "schema.json",
        "store_root": "store",
        "fixed_time": "2025-06-01T00:00:00+00:00",
        "llm": {"provider": "mock", "seed": 7},
        "validation": {"num_replicas": 2},
    }
    for key, value in (config_extra or {}).items():
        if isinstance(value, dict) and isinstance(config.get(key), dict):
            config[key].update(value)
        else:
            config[key] = value
    config_path = tmp_path / name
    config_path.write_text(json.dumps(config), encoding="utf-8")
    return config_path
