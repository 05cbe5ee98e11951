"""Document/line data model, streaming JSONL ingestion, segmentation, batching.

Input corpora are UTF-8 JSONL files with at least an "id" and a "text" field
per record; unknown fields are preserved in ``Document.meta``. Documents are
decomposed into :class:`LineRecord` objects (one per non-empty line, long
lines further split into segments), which are the unit every downstream stage
operates on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

SENTENCE_ENDERS = ".!?"
CLOSERS = "\"')]"
DEFAULT_MAX_SEGMENT_CHARS = 200
DEFAULT_BATCH_LINES = 15

LineKey = tuple[str, int, int]


class CorpusFormatError(ValueError):
    """A corpus record violates the input contract (carries the file line number)."""

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message)
        self.line_number = line_number


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def is_degenerate(self) -> bool:
        return self.text == ""


@dataclass(frozen=True)
class LineRecord:
    """One segment of one line of one document.

    ``line_index`` is the 0-based position among the document's original
    newline-delimited lines (dropped empty lines leave gaps); ``segment_index``
    is the 0-based position within a split long line. ``text`` never contains
    a newline.
    """

    doc_id: str
    line_index: int
    segment_index: int
    text: str

    @property
    def key(self) -> LineKey:
        return (self.doc_id, self.line_index, self.segment_index)


@dataclass(frozen=True)
class LabeledLine:
    """A line record together with its quality label."""

    doc_id: str
    line_index: int
    segment_index: int
    text: str
    label: str

    @property
    def key(self) -> LineKey:
        return (self.doc_id, self.line_index, self.segment_index)


@dataclass(frozen=True)
class Batch:
    doc_id: str
    lines: tuple[LineRecord, ...]

    def __post_init__(self) -> None:
        if not self.lines:
            raise ValueError("batch must contain at least one line")
        if any(rec.doc_id != self.doc_id for rec in self.lines):
            raise ValueError("batch mixes documents")


def load_documents(path: str | Path) -> Iterator[Document]:
    """Stream documents from a JSONL file in file order.

    Raises :class:`CorpusFormatError` (with the offending file line number)
    on malformed JSON, a missing/invalid "id" or "text" field, or a duplicate
    id within the file.
    """
    seen_ids: set[str] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(
                    f"line {line_number}: malformed JSON record: {exc.msg}",
                    line_number,
                ) from exc
            if not isinstance(record, dict):
                raise CorpusFormatError(
                    f"line {line_number}: record is not a JSON object", line_number
                )
            doc_id = record.get("id")
            if not isinstance(doc_id, str) or not doc_id:
                raise CorpusFormatError(
                    f"line {line_number}: missing or empty \"id\" field", line_number
                )
            if "text" not in record:
                raise CorpusFormatError(
                    f"line {line_number}: missing \"text\" field", line_number
                )
            text = record["text"]
            if not isinstance(text, str):
                raise CorpusFormatError(
                    f"line {line_number}: \"text\" is not a string", line_number
                )
            if doc_id in seen_ids:
                raise CorpusFormatError(
                    f"line {line_number}: duplicate document id {doc_id!r}",
                    line_number,
                )
            seen_ids.add(doc_id)
            meta = {k: v for k, v in record.items() if k not in ("id", "text")}
            yield Document(id=doc_id, text=text, meta=meta)


def split_into_lines(doc: Document) -> list[LineRecord]:
    """One record per non-empty newline-delimited line, trailing whitespace trimmed.

    Empty (or whitespace-only) lines are dropped; surviving records keep the
    original line position, so indices may be non-contiguous.
    """
    records = []
    for index, raw in enumerate(doc.text.split("\n")):
        text = raw.rstrip()
        if not text:
            continue
        records.append(LineRecord(doc.id, index, 0, text))
    return records


def _last_split_point(window: str) -> int | None:
    """Rightmost cut position in ``window`` just past a sentence ender.

    Enders are ``. ! ?`` optionally followed by a single closing quote or
    bracket. Returns an exclusive index into ``window``, or None when the
    window contains no sentence-ending punctuation.
    """
    pos = max(window.rfind(ender) for ender in SENTENCE_ENDERS)
    if pos == -1:
        return None
    cut = pos + 1
    if cut < len(window) and window[cut] in CLOSERS:
        cut += 1
    return cut


def segment_long_line(text: str, max_len: int = DEFAULT_MAX_SEGMENT_CHARS) -> list[str]:
    """Split a line into segments of at most ``max_len`` characters.

    Greedy left-to-right: each split lands immediately after the last
    sentence ender within the current ``max_len`` window; a window without
    one is hard-split at ``max_len``. No character is dropped or moved, so
    ``"".join(segments) == text`` always holds.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    segments = []
    rest = text
    while len(rest) > max_len:
        cut = _last_split_point(rest[:max_len])
        if cut is None:
            cut = max_len
        segments.append(rest[:cut])
        rest = rest[cut:]
    segments.append(rest)
    return segments


def join_segments(segments: Iterable[str]) -> str:
    """Inverse of :func:`segment_long_line`."""
    return "".join(segments)


def document_to_records(
    doc: Document,
    max_segment_chars: int = DEFAULT_MAX_SEGMENT_CHARS,
    single_line_docs_only: bool = False,
) -> list[LineRecord]:
    """Split a document into lines and segment the long ones.

    By default every line longer than ``max_segment_chars`` is segmented;
    with ``single_line_docs_only`` segmentation applies only when the whole
    document consists of a single long line.
    """
    lines = split_into_lines(doc)
    if single_line_docs_only and len(lines) != 1:
        return lines
    records = []
    for rec in lines:
        if len(rec.text) <= max_segment_chars:
            records.append(rec)
            continue
        for seg_index, seg in enumerate(segment_long_line(rec.text, max_segment_chars)):
            records.append(LineRecord(rec.doc_id, rec.line_index, seg_index, seg))
    return records


def reconstruct_document(records: Iterable[LineRecord]) -> str:
    """Rebuild a document's text from its records.

    Recovers the original text up to the ingestion normalization (trailing
    whitespace trimmed, empty lines dropped).
    """
    by_line: dict[int, list[LineRecord]] = {}
    for rec in records:
        by_line.setdefault(rec.line_index, []).append(rec)
    lines = []
    for line_index in sorted(by_line):
        segs = sorted(by_line[line_index], key=lambda r: r.segment_index)
        lines.append(join_segments(seg.text for seg in segs))
    return "\n".join(lines)


def make_batches(
    lines: Iterable[LineRecord], max_lines: int = DEFAULT_BATCH_LINES
) -> list[Batch]:
    """Group consecutive records of one document into batches of at most ``max_lines``.

    Input must already be sorted by (doc_id, line_index, segment_index);
    batches never mix documents and preserve order.
    """
    if max_lines < 1:
        raise ValueError("max_lines must be >= 1")
    batches: list[Batch] = []
    current: list[LineRecord] = []
    for rec in lines:
        if current and (rec.doc_id != current[0].doc_id or len(current) == max_lines):
            batches.append(Batch(current[0].doc_id, tuple(current)))
            current = []
        current.append(rec)
    if current:
        batches.append(Batch(current[0].doc_id, tuple(current)))
    return batches


def labeled_line_to_dict(line: LabeledLine) -> dict[str, Any]:
    return {
        "doc_id": line.doc_id,
        "line_index": line.line_index,
        "segment_index": line.segment_index,
        "text": line.text,
        "label": line.label,
    }


def labeled_line_from_dict(row: dict[str, Any]) -> LabeledLine:
    return LabeledLine(
        doc_id=row["doc_id"],
        line_index=int(row["line_index"]),
        segment_index=int(row["segment_index"]),
        text=row["text"],
        label=row["label"],
    )


def read_labeled_corpus(path: str | Path) -> list[LabeledLine]:
    lines = []
    with open(path, "r", encoding="utf-8") as handle:
        for raw in handle:
            if raw.strip():
                lines.append(labeled_line_from_dict(json.loads(raw)))
    return lines


def write_labeled_corpus(lines: Iterable[LabeledLine], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for line in lines:
            handle.write(json.dumps(labeled_line_to_dict(line), ensure_ascii=False) + "\n")


def corpus_stats(path: str | Path) -> dict[str, int]:
    """Document/line counts for ``linequal ingest --stats``."""
    docs = 0
    lines = 0
    segments = 0
    for doc in load_documents(path):
        docs += 1
        recs = document_to_records(doc)
        segments += len(recs)
        lines += len({r.line_index for r in recs})
    return {"documents": docs, "lines": lines, "segments": segments}
