"""Sharded corpus scoring, quality_score injection, and threshold filtering.

Documents are scored in independent shards; within a shard, lines are batched
(optionally grouped by length to even out batch work) and scored, then
restored to document order. Every line gets a calibrated "quality_score" in
[0, 1] quantized to four decimals. Filtering removes lines strictly below the
threshold and drops documents left empty.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from bisect import bisect_right
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Sequence

import numpy as np

from .calibration import PlattParams, apply_platt
from .classifier import BaselineModel, ClassDistribution, predict_proba_matrix
from .corpus import Document, LineKey, LineRecord, document_to_records

logger = logging.getLogger(__name__)

SHARD_NAME_FORMAT = "scored-{index:05d}.jsonl"
MANIFEST_NAME = "manifest.json"
SCORE_DECIMALS = 4


class ScorerError(RuntimeError):
    """The scorer failed on a batch; the enclosing shard is marked failed."""


@dataclass(frozen=True)
class ScoredLine:
    line: LineRecord
    quality_score: float  # in [0, 1], quantized to 4 decimals

    def __post_init__(self) -> None:
        if not 0.0 <= self.quality_score <= 1.0:
            raise ValueError("quality_score must be in [0, 1]")


@dataclass
class ShardPlan:
    shard_size: int = 100_000  # documents per shard
    batch_size: int = 128  # lines per scoring batch
    length_grouping: bool = True
    max_segment_chars: int = 200
    segment_single_line_docs_only: bool = False
    workers: int = 1  # shards scored concurrently

    def __post_init__(self) -> None:
        if self.shard_size < 1 or self.batch_size < 1:
            raise ValueError("shard_size and batch_size must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class FilterStats:
    threshold: float
    lines_total: int = 0
    lines_removed: int = 0
    docs_total: int = 0
    docs_dropped: int = 0
    words_total: int = 0
    words_removed: int = 0
    histogram: list[int] = field(default_factory=lambda: [0] * 10)

    def to_dict(self) -> dict[str, Any]:
        return {
            "threshold": self.threshold,
            "lines_total": self.lines_total,
            "lines_removed": self.lines_removed,
            "docs_total": self.docs_total,
            "docs_dropped": self.docs_dropped,
            "words_total": self.words_total,
            "words_removed": self.words_removed,
            "histogram": list(self.histogram),
        }


class BaselineScorer:
    """Scores lines with the trained baseline model."""

    def __init__(self, model: BaselineModel):
        self._model = model

    def predict(self, lines: Sequence[LineRecord]) -> np.ndarray:
        return predict_proba_matrix(self._model, [rec.text for rec in lines])

    def identity(self) -> str:
        digest = hashlib.sha256()
        digest.update(self._model.weights.tobytes())
        digest.update(self._model.bias.tobytes())
        return digest.hexdigest()[:16]


class ExternalScorer:
    """Scores lines from an imported table of externally produced distributions."""

    def __init__(self, distributions: Iterable[ClassDistribution]):
        self._table: dict[LineKey, np.ndarray] = {}
        for dist in distributions:
            if dist.key is None:
                raise ValueError("external distributions must carry line keys")
            self._table[dist.key] = dist.probs

    def predict(self, lines: Sequence[LineRecord]) -> np.ndarray:
        try:
            return np.stack([self._table[rec.key] for rec in lines])
        except KeyError as exc:
            raise ScorerError(f"no external score for line {exc}") from exc

    def identity(self) -> str:
        digest = hashlib.sha256()
        for key in sorted(self._table):
            digest.update(repr(key).encode())
            digest.update(self._table[key].tobytes())
        return digest.hexdigest()[:16]


def round_score(value: float) -> float:
    return round(float(value), SCORE_DECIMALS)


def _chunked(iterable: Iterable, size: int) -> Iterator[list]:
    chunk: list = []
    for item in iterable:
        chunk.append(item)
        if len(chunk) == size:
            yield chunk
            chunk = []
    if chunk:
        yield chunk


def score_lines(
    records: Sequence[LineRecord],
    scorer,
    platt: PlattParams,
    plan: ShardPlan,
) -> list[float]:
    """Quality scores for records, batched (optionally length-grouped) and
    returned in the original record order."""
    if not records:
        return []
    order = list(range(len(records)))
    if plan.length_grouping:
        order.sort(key=lambda i: len(records[i].text))  # stable: ties keep order
    scores = [0.0] * len(records)
    for start in range(0, len(order), plan.batch_size):
        batch_order = order[start : start + plan.batch_size]
        batch = [records[i] for i in batch_order]
        try:
            probs = scorer.predict(batch)
        except ScorerError:
            raise
        except Exception as exc:
            raise ScorerError(f"scorer failed on a batch of {len(batch)}: {exc}") from exc
        clean_scores = np.asarray(probs)[:, 0]
        calibrated = apply_platt(platt, clean_scores)
        for position, value in zip(batch_order, np.atleast_1d(calibrated)):
            scores[position] = round_score(value)
    return scores


def _scored_doc_row(doc: Document, records: Sequence[LineRecord], scores: Sequence[float]) -> str:
    payload: dict[str, Any] = {"id": doc.id}
    if doc.meta:
        payload["meta"] = doc.meta
    payload["lines"] = [
        {"text": rec.text, "quality_score": score}
        for rec, score in zip(records, scores)
    ]
    payload["quality_score"] = list(scores)
    return json.dumps(payload, ensure_ascii=False)


def shard_path(out_dir: Path, index: int) -> Path:
    return out_dir / SHARD_NAME_FORMAT.format(index=index)


def score_corpus(
    docs: Iterable[Document],
    scorer,
    platt: PlattParams,
    plan: ShardPlan,
    out_dir: str | Path,
    resume: bool = True,
) -> dict[str, Any]:
    """Score a document stream into one JSONL file per shard plus a manifest.

    Shards are independently resumable: a shard file that already exists is
    skipped. A scorer failure marks just that shard failed and scoring
    continues. Returns the manifest (also written to ``manifest.json``).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shards: list[dict[str, Any]] = []

    def resolve(entry: dict[str, Any], index: int, future: Future[int] | None) -> None:
        if future is None:
            return
        try:
            entry["lines"] = future.result()
            entry["status"] = "ok"
        except ScorerError as exc:
            logger.error("shard %d failed: %s", index, exc)
            entry["status"] = "failed"
            entry["error"] = str(exc)

    # shards are independent; a bounded pool keeps at most `workers` in flight
    with ThreadPoolExecutor(max_workers=plan.workers) as executor:
        window: deque[tuple[dict[str, Any], int, Future[int] | None]] = deque()
        for index, shard_docs in enumerate(_chunked(docs, plan.shard_size)):
            path = shard_path(out_dir, index)
            entry: dict[str, Any] = {"name": path.name, "docs": len(shard_docs)}
            shards.append(entry)
            if resume and path.exists():
                entry["status"] = "skipped"
                entry["lines"] = sum(
                    len(row["lines"]) for row in iter_scored_documents(path)
                )
                logger.info("shard %d already scored, skipping", index)
                continue
            while len(window) >= plan.workers:
                resolve(*window.popleft())
            window.append(
                (
                    entry,
                    index,
                    executor.submit(
                        _score_one_shard, shard_docs, scorer, platt, plan, path
                    ),
                )
            )
        while window:
            resolve(*window.popleft())

    manifest = {
        "shard_size": plan.shard_size,
        "batch_size": plan.batch_size,
        "length_grouping": plan.length_grouping,
        "scorer": scorer.identity(),
        "platt": hashlib.sha256(
            json.dumps({"a": platt.a, "b": platt.b}).encode()
        ).hexdigest()[:16],
        "shards": shards,
    }
    tmp = out_dir / (MANIFEST_NAME + ".tmp")
    with open(tmp, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2)
    os.replace(tmp, out_dir / MANIFEST_NAME)
    return manifest


def _score_one_shard(
    shard_docs: Sequence[Document],
    scorer,
    platt: PlattParams,
    plan: ShardPlan,
    path: Path,
) -> int:
    doc_records = [
        document_to_records(
            doc,
            max_segment_chars=plan.max_segment_chars,
            single_line_docs_only=plan.segment_single_line_docs_only,
        )
        for doc in shard_docs
    ]
    flat = [rec for records in doc_records for rec in records]
    scores = score_lines(flat, scorer, platt, plan)

    lines_written = 0
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as handle:
        cursor = 0
        for doc, records in zip(shard_docs, doc_records):
            doc_scores = scores[cursor : cursor + len(records)]
            cursor += len(records)
            handle.write(_scored_doc_row(doc, records, doc_scores) + "\n")
            lines_written += len(records)
    os.replace(tmp, path)
    return lines_written


def iter_scored_documents(scored: str | Path) -> Iterator[dict[str, Any]]:
    """Yield scored-document rows from a shard directory or a single file."""
    scored = Path(scored)
    if scored.is_dir():
        paths = sorted(scored.glob("scored-*.jsonl"))
    else:
        paths = [scored]
    for path in paths:
        with open(path, "r", encoding="utf-8") as handle:
            for raw in handle:
                if raw.strip():
                    yield json.loads(raw)


def count_words(text: str) -> int:
    return len(text.split())


def histogram(scores: Iterable[float], bins: int = 10) -> list[int]:
    """Counts per bin [i/bins, (i+1)/bins), last bin closed at 1.0."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    edges = [i / bins for i in range(bins + 1)]
    counts = [0] * bins
    for score in scores:
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score {score} outside [0, 1]")
        index = min(bisect_right(edges, score) - 1, bins - 1)
        counts[index] += 1
    return counts


def filter_corpus(
    scored: str | Path,
    threshold: float,
    out_path: str | Path | None = None,
    word_counter: Callable[[str], int] = count_words,
) -> FilterStats:
    """Drop lines scoring strictly below ``threshold`` (ties survive), then
    drop documents with no surviving lines; survivors are rejoined with
    newlines. Writes filtered documents as JSONL when ``out_path`` is given.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    stats = FilterStats(threshold=threshold)
    edges = [i / 10 for i in range(11)]
    out_handle = open(out_path, "w", encoding="utf-8") if out_path else None
    try:
        for row in iter_scored_documents(scored):
            stats.docs_total += 1
            kept_lines = []
            for line in row["lines"]:
                score = float(line["quality_score"])
                text = line["text"]
                words = word_counter(text)
                stats.lines_total += 1
                stats.words_total += words
                stats.histogram[min(bisect_right(edges, score) - 1, 9)] += 1
                if score < threshold:
                    stats.lines_removed += 1
                    stats.words_removed += words
                else:
                    kept_lines.append(text)
            if not kept_lines:
                stats.docs_dropped += 1
                continue
            if out_handle is not None:
                payload: dict[str, Any] = {"id": row["id"]}
                if row.get("meta"):
                    payload["meta"] = row["meta"]
                payload["text"] = "\n".join(kept_lines)
                out_handle.write(json.dumps(payload, ensure_ascii=False) + "\n")
    finally:
        if out_handle is not None:
            out_handle.close()
    return stats


@dataclass(frozen=True)
class CorpusCounts:
    docs: int
    lines: int
    words: int


def count_scored_corpus(
    scored: str | Path, word_counter: Callable[[str], int] = count_words
) -> CorpusCounts:
    docs = lines = words = 0
    for row in iter_scored_documents(scored):
        docs += 1
        for line in row["lines"]:
            lines += 1
            words += word_counter(line["text"])
    return CorpusCounts(docs, lines, words)


def count_filtered_corpus(
    path: str | Path, word_counter: Callable[[str], int] = count_words
) -> CorpusCounts:
    docs = lines = words = 0
    with open(path, "r", encoding="utf-8") as handle:
        for raw in handle:
            if not raw.strip():
                continue
            row = json.loads(raw)
            docs += 1
            for text in row["text"].split("\n"):
                lines += 1
                words += word_counter(text)
    return CorpusCounts(docs, lines, words)


def _pct(removed: int, total: int) -> float:
    return 100.0 * removed / total if total else 0.0


def reduction_report(
    original: CorpusCounts, filtered: CorpusCounts
) -> tuple[str, dict[str, Any]]:
    """Line/document/word reduction percentages as text and JSON.

    Words are whitespace-delimited tokens, a proxy for tokenizer-level
    accounting; supply a different ``word_counter`` to the count helpers for
    an exact tokenizer.
    """
    payload = {}
    for name, orig, filt in (
        ("documents", original.docs, filtered.docs),
        ("lines", original.lines, filtered.lines),
        ("words", original.words, filtered.words),
    ):
        payload[name] = {
            "original": orig,
            "filtered": filt,
            "reduction_pct": _pct(orig - filt, orig),
        }
    text_lines = ["reduction report"]
    for name, entry in payload.items():
        text_lines.append(
            f"  {name}: {entry['original']} -> {entry['filtered']}"
            f" ({entry['reduction_pct']:.1f}% removed)"
        )
    return "\n".join(text_lines), payload
