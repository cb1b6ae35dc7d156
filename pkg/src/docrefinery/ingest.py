"""Document acquisition and main-content extraction.

Sources come in three kinds: http URLs fetched politely, local files (a
path or a directory of files), and line streams batched into fixed windows.
HTML bodies go through a text-density extractor that keeps the main article
block and drops navigation, scripts and other boilerplate.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from html.parser import HTMLParser
from pathlib import Path
from urllib.parse import urlsplit

import httpx

from .normalize import normalize_whitespace

logger = logging.getLogger(__name__)

SOURCE_KINDS = ("http", "file", "stream")
CONTENT_KINDS = ("html", "text", "log")

DEFAULT_POLITENESS_DELAY = 1.0
DEFAULT_MAX_RETRIES = 3
DEFAULT_MAX_BODY_BYTES = 10 * 1024 * 1024
DEFAULT_BATCH_LINES = 1

# Link-text penalty in the block scoring function.
LINK_PENALTY = 3


class IngestError(Exception):
    pass


class EmptyExtractionError(IngestError):
    """Extraction produced no text; the document is dropped with a reason."""


class UndecodableBodyError(IngestError):
    pass


@dataclass(frozen=True)
class SourceSpec:
    """One registered acquisition source."""

    source_id: str
    kind: str
    locator: str
    poll_interval: float = 300.0
    content_kind_hint: str | None = None

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise IngestError(f"unknown source kind: {self.kind!r}")
        if not self.locator:
            raise IngestError("locator must be non-empty")
        if self.kind == "http" and self.poll_interval <= 0:
            raise IngestError("poll_interval must be > 0 for http sources")
        if self.content_kind_hint is not None and self.content_kind_hint not in CONTENT_KINDS:
            raise IngestError(f"unknown content kind: {self.content_kind_hint!r}")

    @property
    def content_kind(self) -> str:
        if self.content_kind_hint is not None:
            return self.content_kind_hint
        return {"http": "html", "file": "text", "stream": "log"}[self.kind]


@dataclass(frozen=True)
class RawDocument:
    """A fetched, content-extracted document with provenance."""

    doc_id: str
    source_id: str
    fetched_at: str
    locator: str
    content_kind: str
    raw_text: str
    title: str | None = None
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FetchResult:
    locator: str
    body: bytes
    media_type: str


@dataclass(frozen=True)
class SkipRecord:
    source_id: str
    locator: str
    reason: str


def compute_doc_id(source_id: str, locator: str, raw_text: str) -> str:
    payload = f"{source_id}\n{locator}\n{raw_text}".encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def make_raw_document(
    source: SourceSpec,
    locator: str,
    title: str | None,
    raw_text: str,
    content_kind: str | None = None,
    metadata: dict | None = None,
    now: datetime | None = None,
) -> RawDocument:
    if not raw_text:
        raise IngestError("raw_text must be non-empty")
    stamp = (now or datetime.now(timezone.utc)).isoformat()
    return RawDocument(
        doc_id=compute_doc_id(source.source_id, locator, raw_text),
        source_id=source.source_id,
        fetched_at=stamp,
        locator=locator,
        content_kind=content_kind or source.content_kind,
        raw_text=raw_text,
        title=title,
        metadata=dict(metadata or {}),
    )


# --- source registry -------------------------------------------------------

def _spec_to_dict(spec: SourceSpec) -> dict:
    data = {
        "source_id": spec.source_id,
        "kind": spec.kind,
        "locator": spec.locator,
        "poll_interval": spec.poll_interval,
    }
    if spec.content_kind_hint is not None:
        data["content_kind_hint"] = spec.content_kind_hint
    return data


def _spec_from_dict(data: dict) -> SourceSpec:
    try:
        return SourceSpec(
            source_id=data["source_id"],
            kind=data["kind"],
            locator=data["locator"],
            poll_interval=float(data.get("poll_interval", 300.0)),
            content_kind_hint=data.get("content_kind_hint"),
        )
    except KeyError as exc:
        raise IngestError(f"source entry missing key {exc}") from None


def load_sources(path: str | Path) -> list[SourceSpec]:
    """Read the source registry: a JSON list of source objects."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise IngestError("source registry must be a JSON list")
    specs = [_spec_from_dict(entry) for entry in raw]
    seen: set[str] = set()
    for spec in specs:
        if spec.source_id in seen:
            raise IngestError(f"duplicate source_id: {spec.source_id}")
        seen.add(spec.source_id)
    return specs


def save_sources(path: str | Path, specs: list[SourceSpec]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    payload = json.dumps([_spec_to_dict(s) for s in specs], indent=2, ensure_ascii=False)
    tmp.write_text(payload + "\n", encoding="utf-8")
    tmp.replace(path)


def add_source(registry_path: str | Path, spec: SourceSpec) -> list[SourceSpec]:
    """Append a source to the registry; source_id must be new."""
    registry_path = Path(registry_path)
    specs = load_sources(registry_path) if registry_path.exists() else []
    if any(s.source_id == spec.source_id for s in specs):
        raise IngestError(f"source_id already registered: {spec.source_id}")
    specs.append(spec)
    save_sources(registry_path, specs)
    return specs


# --- fetching --------------------------------------------------------------

def _default_http_get(url: str, timeout: float) -> tuple[int, str, bytes]:
    response = httpx.get(url, timeout=timeout, follow_redirects=True)
    media_type = response.headers.get("content-type", "text/html")
    return response.status_code, media_type, response.content


class Fetcher:
    """Fetches source bodies with per-host politeness and bounded retries.

    Network and time dependencies are injectable so the politeness and
    retry behavior is testable without sockets or real sleeps.
    """

    def __init__(
        self,
        politeness_delay: float = DEFAULT_POLITENESS_DELAY,
        max_retries: int = DEFAULT_MAX_RETRIES,
        max_body_bytes: int = DEFAULT_MAX_BODY_BYTES,
        batch_lines: int = DEFAULT_BATCH_LINES,
        timeout: float = 30.0,
        http_get=None,
        clock=time.monotonic,
        sleep=time.sleep,
    ):
        if batch_lines < 1:
            raise IngestError("batch_lines must be >= 1")
        self.politeness_delay = politeness_delay
        self.max_retries = max_retries
        self.max_body_bytes = max_body_bytes
        self.batch_lines = batch_lines
        self.timeout = timeout
        self._http_get = http_get or _default_http_get
        self._clock = clock
        self._sleep = sleep
        self._last_fetch_per_host: dict[str, float] = {}
        self.skip_log: list[SkipRecord] = []

    def _record_skip(self, source: SourceSpec, locator: str, reason: str):
        self.skip_log.append(SkipRecord(source.source_id, locator, reason))
        logger.warning("skipped %s (%s): %s", locator, source.source_id, reason)

    def _wait_for_host(self, host: str):
        last = self._last_fetch_per_host.get(host)
        if last is not None:
            elapsed = self._clock() - last
            if elapsed < self.politeness_delay:
                self._sleep(self.politeness_delay - elapsed)
        self._last_fetch_per_host[host] = self._clock()

    def _fetch_http(self, source: SourceSpec) -> list[FetchResult]:
        url = source.locator
        host = urlsplit(url).netloc or url
        attempt = 0
        while True:
            self._wait_for_host(host)
            attempt += 1
            try:
                status, media_type, body = self._http_get(url, self.timeout)
            except Exception as exc:  # noqa: BLE001 - transport errors are retryable
                if attempt > self.max_retries:
                    self._record_skip(source, url, f"network failure after {attempt} attempts: {exc}")
                    return []
                backoff = 0.5 * (2 ** (attempt - 1))
                logger.debug("retrying %s in %.1fs: %s", url, backoff, exc)
                self._sleep(backoff)
                continue
            if status >= 400:
                self._record_skip(source, url, f"http status {status}")
                return []
            if len(body) > self.max_body_bytes:
                self._record_skip(source, url, f"body exceeds {self.max_body_bytes} bytes")
                return []
            return [FetchResult(url, body, media_type)]

    def _fetch_file(self, source: SourceSpec) -> list[FetchResult]:
        path = Path(source.locator)
        if not path.exists():
            self._record_skip(source, source.locator, "path does not exist")
            return []
        paths = sorted(p for p in path.iterdir() if p.is_file()) if path.is_dir() else [path]
        results = []
        for p in paths:
            body = p.read_bytes()
            if len(body) > self.max_body_bytes:
                self._record_skip(source, str(p), f"body exceeds {self.max_body_bytes} bytes")
                continue
            media = "text/html" if p.suffix.lower() in (".html", ".htm") else "text/plain"
            results.append(FetchResult(str(p), body, media))
        return results

    def _fetch_stream(self, source: SourceSpec) -> list[FetchResult]:
        path = Path(source.locator)
        if not path.exists():
            self._record_skip(source, source.locator, "path does not exist")
            return []
        lines = path.read_text(encoding="utf-8", errors="replace").splitlines()
        lines = [line for line in lines if line.strip()]
        results = []
        for start in range(0, len(lines), self.batch_lines):
            window = lines[start : start + self.batch_lines]
            locator = f"{source.locator}:{start + 1}-{start + len(window)}"
            results.append(FetchResult(locator, "\n".join(window).encode("utf-8"), "text/plain"))
        return results

    def fetch(self, source: SourceSpec) -> list[FetchResult]:
        """Resolve a source into (locator, body, media type) triples.

        Failures are recorded in skip_log rather than raised; callers see
        only the bodies that survived.
        """
        if source.kind == "http":
            return self._fetch_http(source)
        if source.kind == "file":
            return self._fetch_file(source)
        return self._fetch_stream(source)


# --- content extraction ----------------------------------------------------

_CHARSET_IN_TYPE_RE = re.compile(r"charset=([\w-]+)", re.IGNORECASE)
_CHARSET_IN_META_RE = re.compile(rb"""<meta[^>]+charset=["']?([\w-]+)""", re.IGNORECASE)
_BARE_LT_RE = re.compile(r"<(?=[a-zA-Z])")

# Subtrees under these tags carry no article text.
_PRUNE_TAGS = frozenset(
    "script style noscript template svg iframe nav header footer aside form "
    "button select option label figure".split()
)
_VOID_TAGS = frozenset("br hr img meta link input area base col embed source track wbr".split())
_BLOCK_TAGS = frozenset(
    "p div br li ul ol h1 h2 h3 h4 h5 h6 tr table blockquote pre article "
    "section main td th dt dd hr".split()
)
_CANDIDATE_TAGS = ("article", "main", "section", "div", "td", "body")


class _Node:
    __slots__ = ("tag", "children")

    def __init__(self, tag: str):
        self.tag = tag
        self.children: list = []  # _Node or str


class _TreeBuilder(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.root = _Node("(root)")
        self._stack = [self.root]

    def handle_starttag(self, tag, attrs):
        node = _Node(tag)
        self._stack[-1].children.append(node)
        if tag not in _VOID_TAGS:
            self._stack.append(node)

    def handle_startendtag(self, tag, attrs):
        self._stack[-1].children.append(_Node(tag))

    def handle_endtag(self, tag):
        # Tolerate unbalanced markup: pop to the matching open tag if any.
        for i in range(len(self._stack) - 1, 0, -1):
            if self._stack[i].tag == tag:
                del self._stack[i:]
                return

    def handle_data(self, data):
        if data:
            self._stack[-1].children.append(data)


def _text_stats(node: _Node, in_link: bool = False) -> tuple[int, int]:
    """(total text length, link text length) under node, pruned subtrees excluded."""
    total = 0
    link = 0
    for child in node.children:
        if isinstance(child, str):
            length = len(" ".join(child.split()))
            total += length
            if in_link:
                link += length
        elif child.tag not in _PRUNE_TAGS:
            sub_total, sub_link = _text_stats(child, in_link or child.tag == "a")
            total += sub_total
            link += sub_link
    return total, link


def _candidates(node: _Node, out: list[_Node]):
    if node.tag in _CANDIDATE_TAGS:
        out.append(node)
    for child in node.children:
        if isinstance(child, _Node) and child.tag not in _PRUNE_TAGS:
            _candidates(child, out)


def _collect_paragraphs(node: _Node) -> list[str]:
    paragraphs: list[str] = []
    buffer: list[str] = []

    def flush():
        text = " ".join(" ".join(buffer).split())
        if text:
            paragraphs.append(text)
        buffer.clear()

    def walk(n: _Node):
        for child in n.children:
            if isinstance(child, str):
                buffer.append(child)
            elif child.tag in _PRUNE_TAGS:
                continue
            else:
                if child.tag in _BLOCK_TAGS:
                    flush()
                walk(child)
                if child.tag in _BLOCK_TAGS:
                    flush()

    walk(node)
    flush()
    return paragraphs


def _find_first(node: _Node, tag: str) -> _Node | None:
    for child in node.children:
        if isinstance(child, _Node):
            if child.tag == tag:
                return child
            if child.tag in _PRUNE_TAGS and tag not in ("title",):
                continue
            found = _find_first(child, tag)
            if found is not None:
                return found
    return None


def _node_text(node: _Node | None) -> str:
    if node is None:
        return ""
    parts: list[str] = []

    def walk(n: _Node):
        for child in n.children:
            if isinstance(child, str):
                parts.append(child)
            elif child.tag not in _PRUNE_TAGS:
                walk(child)

    walk(node)
    return " ".join(" ".join(parts).split())


def decode_body(body: bytes, media_type: str) -> str:
    """Decode bytes honoring a declared charset, falling back to UTF-8."""
    charset = None
    match = _CHARSET_IN_TYPE_RE.search(media_type or "")
    if match:
        charset = match.group(1)
    elif b"charset" in body[:2048]:
        meta = _CHARSET_IN_META_RE.search(body[:2048])
        if meta:
            charset = meta.group(1).decode("ascii", errors="replace")
    for candidate in (charset, "utf-8"):
        if not candidate:
            continue
        try:
            return body.decode(candidate, errors="replace")
        except LookupError:
            continue
    return body.decode("utf-8", errors="replace")


def _escape_bare_markup(text: str) -> str:
    return _BARE_LT_RE.sub("&lt;", text)


def extract_main_content(body: bytes, media_type: str) -> tuple[str | None, str]:
    """Extract (title, main text) from a fetched body.

    HTML goes through block scoring: every candidate block is scored by
    text length minus three times its link-text length, and the best
    subtree's paragraphs become the document text. Non-HTML bodies pass
    through with whitespace normalization only.
    """
    text = decode_body(body, media_type)
    if "html" not in (media_type or "").lower():
        plain = normalize_whitespace(text)
        if not plain:
            raise EmptyExtractionError("body is empty")
        return None, plain

    builder = _TreeBuilder()
    builder.feed(text)
    builder.close()
    root = builder.root

    title_node = _find_first(root, "title")
    title = _node_text(title_node) or _node_text(_find_first(root, "h1")) or None

    nodes: list[_Node] = []
    _candidates(root, nodes)
    if not nodes:
        nodes = [root]
    best = None
    best_score = None
    for node in nodes:
        total, link = _text_stats(node)
        score = total - LINK_PENALTY * link
        if best_score is None or score > best_score:
            best, best_score = node, score

    paragraphs = _collect_paragraphs(best)
    raw_text = normalize_whitespace("\n\n".join(paragraphs))
    raw_text = _escape_bare_markup(raw_text)
    if not raw_text:
        raise EmptyExtractionError("no text content after extraction")
    return title, raw_text
