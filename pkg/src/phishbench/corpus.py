"""Email corpus standardization.

Ingests heterogeneous public email datasets (divergent CSV shapes, JSONL),
cleans the text, and stores everything in one canonical line-delimited
format: one JSON object per line with the fields of :class:`EmailRecord`.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
import sys
from dataclasses import dataclass, field, asdict
from decimal import Decimal, ROUND_HALF_UP
from importlib import resources
from pathlib import Path

from .errors import CorpusError

LABELS = ("phishing", "benign")
LANGUAGES = ("en", "it", "de", "unknown")

# Canonical field order for the corpus file; one record per line, UTF-8.
RECORD_FIELDS = ("id", "subject", "body", "label", "language", "source", "generated")

csv.field_size_limit(sys.maxsize)


@dataclass(frozen=True)
class EmailRecord:
    """One standardized email: binary label, cleaned subject/body."""

    id: str
    subject: str
    body: str
    label: str
    language: str = "unknown"
    source: str = ""
    generated: bool = False


def validate_record(record: EmailRecord) -> list[str]:
    """Return the list of invariant violations (empty when valid)."""
    problems = []
    if not record.id:
        problems.append("empty id")
    if record.label not in LABELS:
        problems.append(f"label {record.label!r} not in {LABELS}")
    if record.language not in LANGUAGES:
        problems.append(f"language {record.language!r} not in {LANGUAGES}")
    for name in ("subject", "body"):
        text = getattr(record, name)
        if re.search(r"<[^>]*>", text):
            problems.append(f"{name} contains an HTML tag")
        if re.search(r"\s\s", text):
            problems.append(f"{name} contains a whitespace run")
        if text != text.strip():
            problems.append(f"{name} has leading/trailing whitespace")
    return problems


# --------------------------------------------------------------------------
# Text cleaning
# --------------------------------------------------------------------------

_ENTITIES = (("&amp;", "&"), ("&lt;", "<"), ("&gt;", ">"), ("&quot;", '"'), ("&apos;", "'"))
_WS_RE = re.compile(r"\s+")
_SCRIPT_STYLE_RE = re.compile(
    r"<\s*(script|style)\b[^>]*>.*?(<\s*/\s*\1\s*>|$)", re.IGNORECASE | re.DOTALL
)


def _decode_entities(text: str) -> str:
    for entity, char in _ENTITIES:
        text = text.replace(entity, char)
    return text


def _strip_tags(text: str) -> str:
    # Script/style elements lose their contents entirely, then every
    # remaining tag is replaced by a space. An unclosed tag consumes to
    # the next '>' or to the end of the string.
    text = _SCRIPT_STYLE_RE.sub(" ", text)
    out = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "<":
            end = text.find(">", i + 1)
            i = n if end == -1 else end + 1
            out.append(" ")
        else:
            out.append(c)
            i += 1
    return "".join(out)


def clean_text(raw: str) -> str:
    """Strip HTML, decode the five common entities, collapse whitespace.

    The pass is repeated until the text stops changing, so the result is
    idempotent even for pathological nestings like ``&amp;lt;`` (each pass
    can only shrink the text, hence this terminates).
    """
    text = raw
    while True:
        cleaned = _WS_RE.sub(" ", _strip_tags(_decode_entities(text))).strip()
        if cleaned == text:
            return cleaned
        text = cleaned


# --------------------------------------------------------------------------
# Dataset descriptors
# --------------------------------------------------------------------------

INPUT_FORMATS = ("csv-variant-a", "csv-variant-b", "jsonl")


@dataclass(frozen=True)
class DatasetDescriptor:
    """Where a source dataset's columns live and what its labels mean.

    ``column_map`` maps canonical fields (subject/body/label) to source
    column names (csv-variant-a, jsonl) or 0-based positions (csv-variant-b,
    which is headerless). ``label_map`` maps lowercased raw label values to
    the binary classes; anything outside it is rejected loudly.
    """

    name: str
    expected_total: int
    expected_phishing: int
    expected_benign: int
    input_format: str
    column_map: dict
    label_map: dict
    language: str = "en"

    def __post_init__(self):
        if self.expected_total != self.expected_phishing + self.expected_benign:
            raise CorpusError(
                f"{self.name}: expected_total {self.expected_total} != "
                f"{self.expected_phishing} + {self.expected_benign}"
            )
        if self.input_format not in INPUT_FORMATS:
            raise CorpusError(f"{self.name}: unknown input_format {self.input_format!r}")
        if "body" not in self.column_map or "label" not in self.column_map:
            raise CorpusError(f"{self.name}: column_map must map at least body and label")


def load_descriptors(path: str | Path | None = None) -> dict[str, DatasetDescriptor]:
    """Load the descriptor registry (the checked-in one by default)."""
    if path is None:
        raw = resources.files("phishbench").joinpath("data/datasets.json").read_text("utf-8")
    else:
        raw = Path(path).read_text("utf-8")
    registry = {}
    for entry in json.loads(raw)["datasets"]:
        descriptor = DatasetDescriptor(**entry)
        registry[descriptor.name] = descriptor
    return registry


# --------------------------------------------------------------------------
# Ingestion
# --------------------------------------------------------------------------

@dataclass
class IngestResult:
    records: list[EmailRecord] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    rejected: int = 0


def _iter_source_rows(path: Path, descriptor: DatasetDescriptor):
    """Yield dicts of raw canonical-field values, per descriptor.column_map."""
    cmap = descriptor.column_map
    if descriptor.input_format == "jsonl":
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    yield {f: obj.get(c) for f, c in cmap.items()}
    elif descriptor.input_format == "csv-variant-a":
        with open(path, encoding="utf-8", errors="replace", newline="") as fh:
            for row in csv.DictReader(fh):
                yield {f: row.get(c) for f, c in cmap.items()}
    else:  # csv-variant-b: headerless, positional columns
        with open(path, encoding="utf-8", errors="replace", newline="") as fh:
            for row in csv.reader(fh):
                yield {
                    f: (row[int(c)] if int(c) < len(row) else None)
                    for f, c in cmap.items()
                }


def ingest_dataset(path: str | Path, descriptor: DatasetDescriptor) -> IngestResult:
    """Standardize one source dataset into EmailRecords.

    Rows with labels outside the descriptor's label_map are rejected and
    counted, never silently dropped. A count mismatch against the
    descriptor's expected totals produces a warning, not a failure
    (public copies drift).
    """
    path = Path(path)
    result = IngestResult()
    try:
        rows = _iter_source_rows(path, descriptor)
        for i, raw in enumerate(rows):
            label_raw = raw.get("label")
            label = descriptor.label_map.get(str(label_raw).strip().lower())
            if label is None:
                result.rejected += 1
                continue
            result.records.append(
                EmailRecord(
                    id=f"{descriptor.name}-{i:06d}",
                    subject=clean_text(str(raw.get("subject") or "")),
                    body=clean_text(str(raw.get("body") or "")),
                    label=label,
                    language=descriptor.language,
                    source=descriptor.name,
                )
            )
    except (OSError, json.JSONDecodeError, csv.Error, ValueError) as exc:
        raise CorpusError(f"cannot ingest {path}: {exc}") from exc

    if result.rejected:
        result.warnings.append(
            f"{descriptor.name}: rejected {result.rejected} rows with unmappable labels"
        )
    if len(result.records) != descriptor.expected_total:
        result.warnings.append(
            f"{descriptor.name}: count mismatch, got {len(result.records)} records, "
            f"descriptor expects {descriptor.expected_total}"
        )
    else:
        got_phish = sum(r.label == "phishing" for r in result.records)
        if got_phish != descriptor.expected_phishing:
            result.warnings.append(
                f"{descriptor.name}: class mismatch, got {got_phish} phishing, "
                f"descriptor expects {descriptor.expected_phishing}"
            )
    return result


# --------------------------------------------------------------------------
# Canonical corpus files
# --------------------------------------------------------------------------

def record_to_json(record: EmailRecord) -> str:
    obj = asdict(record)
    return json.dumps({f: obj[f] for f in RECORD_FIELDS}, ensure_ascii=False)


def write_canonical(records: list[EmailRecord], path: str | Path) -> int:
    """Write records as canonical JSONL; returns the count written.

    Refuses the whole batch on any invariant violation (naming the record)
    or duplicate id. Writes to a temp file and renames, so readers never
    observe a partial file.
    """
    seen = set()
    for record in records:
        problems = validate_record(record)
        if problems:
            raise CorpusError(f"record {record.id!r} violates invariants: {problems}")
        if record.id in seen:
            raise CorpusError(f"duplicate record id {record.id!r}")
        seen.add(record.id)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record_to_json(record) + "\n")
    os.replace(tmp, path)
    return len(records)


def load_canonical(path: str | Path) -> list[EmailRecord]:
    """Load a canonical corpus file; malformed lines fail naming the line."""
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                record = EmailRecord(**{f: obj[f] for f in RECORD_FIELDS})
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}: malformed record on line {lineno}: {exc}") from exc
            if record.id in seen:
                raise CorpusError(f"{path}: duplicate id {record.id!r} on line {lineno}")
            seen.add(record.id)
            records.append(record)
    return records


# --------------------------------------------------------------------------
# Statistics
# --------------------------------------------------------------------------

@dataclass
class CorpusStats:
    total: int
    per_class: dict
    per_language: dict
    per_language_pct: dict
    mean_body_length: float


def _pct(count: int, total: int) -> float:
    # two decimals, round-half-up; exact decimal arithmetic so .xx5 cases
    # do not fall prey to binary float representation
    return float(
        (Decimal(count) * 100 / Decimal(total)).quantize(Decimal("0.01"), ROUND_HALF_UP)
    )


def corpus_stats(records: list[EmailRecord]) -> CorpusStats:
    if not records:
        raise CorpusError("no statistics on an empty corpus")
    per_class = {label: 0 for label in LABELS}
    per_language: dict[str, int] = {}
    for record in records:
        per_class[record.label] += 1
        per_language[record.language] = per_language.get(record.language, 0) + 1
    total = len(records)
    return CorpusStats(
        total=total,
        per_class=per_class,
        per_language=dict(sorted(per_language.items())),
        per_language_pct={k: _pct(v, total) for k, v in sorted(per_language.items())},
        mean_body_length=sum(len(r.body) for r in records) / total,
    )
