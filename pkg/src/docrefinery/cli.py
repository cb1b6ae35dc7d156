"""Command-line entry points.

Every subcommand is a thin layer over the library: `run` drives one
pipeline pass, `review` works the manual queue, `serve` starts the HTTP
service, `eval` scores stored or supplied predictions against a gold
file, and `ingest add-source` registers a new source. Machine output is
newline-delimited JSON on stdout; diagnostics go to stderr.

Exit codes: 0 success, 1 fatal configuration or command error, 2 run
completed with recorded per-document failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from .ingest import IngestError, SourceSpec, add_source
from .metrics import JoinError, MetricsError, evaluate, load_gold_file
from .pipeline import PipelineConfigError, load_config, make_embedder, run_pipeline
from .schema import SchemaError, load_schema_file
from .store import DocumentStore, PromotionGateError, StoreError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, ensure_ascii=False))


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_FATAL


def cmd_run(args) -> int:
    overrides = {
        "workers": args.workers,
        "replicas": args.replicas,
        "dedup_threshold": args.dedup_threshold,
    }
    config = load_config(args.config, overrides)
    outcome = run_pipeline(config)
    _emit(outcome.stats)
    if outcome.document_errors:
        logger.warning("%d per-document failures recorded", outcome.document_errors)
        return EXIT_PARTIAL
    return EXIT_OK


def _review_payload(item_id: str, item: dict) -> dict:
    report = item.get("report", {})
    return {
        "id": item_id,
        "doc_id": item.get("doc_id", item_id),
        "status": item.get("status"),
        "flagged_fields": report.get("flagged_fields", []),
        "rule_violations": report.get("rule_violations", []),
        "notes": report.get("notes", []),
        "resolution_note": item.get("resolution_note"),
    }


def cmd_review(args) -> int:
    config = load_config(args.config)
    store = DocumentStore(config.store_root)
    try:
        if args.action == "list":
            for item_id, item in store.pending_reviews():
                _emit(_review_payload(item_id, item))
            return EXIT_OK
        schema = load_schema_file(config.schema_path)
        decision = "approved" if args.action == "approve" else "rejected"
        accepted_at = config.fixed_time or datetime.now(timezone.utc).isoformat()
        item = store.resolve_review(
            args.id, decision, schema, note=args.note, accepted_at=accepted_at
        )
        _emit(_review_payload(args.id, item))
        return EXIT_OK
    except PromotionGateError as exc:
        violations = "; ".join(f"{v.field}: {v.code}" for v in exc.violations)
        return _fail(f"approval gate failed for {args.id}: {violations}")
    except StoreError as exc:
        return _fail(str(exc))
    finally:
        store.close()


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = load_config(args.config)
    app = create_app(config)
    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = load_config(args.config)
    schema = load_schema_file(config.schema_path)
    embedder = make_embedder(config)
    gold = load_gold_file(args.gold)
    if args.pred:
        predictions = []
        for line in Path(args.pred).read_text(encoding="utf-8").splitlines():
            if line.strip():
                predictions.append(json.loads(line))
    else:
        store = DocumentStore(config.store_root)
        try:
            predictions = [
                {"doc_id": record["doc_id"], "fields": record["fields"]}
                for _, record in store.scan("normalized")
                if record.get("schema_id") == schema.schema_id
            ]
        finally:
            store.close()
    result = evaluate(predictions, gold, schema, embedder)
    _emit(result.to_dict())
    return EXIT_OK


def cmd_ingest_add_source(args) -> int:
    config = load_config(args.config)
    data = json.loads(Path(args.file).read_text(encoding="utf-8"))
    spec = SourceSpec(
        source_id=data["source_id"],
        kind=data["kind"],
        locator=data["locator"],
        poll_interval=float(data.get("poll_interval", 300.0)),
        content_kind_hint=data.get("content_kind_hint"),
    )
    add_source(config.sources_path, spec)
    _emit(
        {
            "source_id": spec.source_id,
            "kind": spec.kind,
            "locator": spec.locator,
            "poll_interval": spec.poll_interval,
            "content_kind_hint": spec.content_kind_hint,
        }
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="docrefinery",
        description="Turn document streams into validated structured records.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one pipeline pass")
    run_p.add_argument("--config", required=True, help="pipeline config JSON")
    run_p.add_argument("--workers", type=int, default=None, help="worker pool size")
    run_p.add_argument("--replicas", type=int, default=None, help="validation replicas (K)")
    run_p.add_argument("--dedup-threshold", type=float, default=None, dest="dedup_threshold")
    run_p.set_defaults(func=cmd_run)

    review_p = sub.add_parser("review", help="work the manual review queue")
    review_sub = review_p.add_subparsers(dest="action", required=True)
    list_p = review_sub.add_parser("list", help="print pending items")
    list_p.add_argument("--config", default="config.json")
    list_p.set_defaults(func=cmd_review)
    for action in ("approve", "reject"):
        action_p = review_sub.add_parser(action)
        action_p.add_argument("id", help="review item id")
        action_p.add_argument("--note", default=None, help="resolution note")
        action_p.add_argument("--config", default="config.json")
        action_p.set_defaults(func=cmd_review)

    serve_p = sub.add_parser("serve", help="start the HTTP service")
    serve_p.add_argument("--port", type=int, required=True)
    serve_p.add_argument("--config", default="config.json")
    serve_p.set_defaults(func=cmd_serve)

    eval_p = sub.add_parser("eval", help="score predictions against a gold file")
    eval_p.add_argument("--gold", required=True, help="gold annotations (NDJSON)")
    eval_p.add_argument("--pred", default=None, help="predictions NDJSON; default: stored records")
    eval_p.add_argument("--config", default="config.json")
    eval_p.set_defaults(func=cmd_eval)

    ingest_p = sub.add_parser("ingest", help="source registry commands")
    ingest_sub = ingest_p.add_subparsers(dest="action", required=True)
    add_p = ingest_sub.add_parser("add-source", help="register a new source")
    add_p.add_argument("--file", required=True, help="JSON file describing the source")
    add_p.add_argument("--config", default="config.json")
    add_p.set_defaults(func=cmd_ingest_add_source)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PipelineConfigError, SchemaError, IngestError) as exc:
        return _fail(str(exc))
    except (MetricsError, JoinError) as exc:
        return _fail(str(exc))
    except FileNotFoundError as exc:
        return _fail(f"file not found: {exc.filename or exc}")
    except json.JSONDecodeError as exc:
        return _fail(f"invalid JSON input: {exc}")


if __name__ == "__main__":
    sys.exit(main())
