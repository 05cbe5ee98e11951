"""Line labeling through a chat-completion endpoint with a dynamic label registry.

The labeler walks a corpus in batches of consecutive lines, asks the model to
tag each line either "Clean" or with a short descriptive low-quality label,
and grows the label list as the model invents new labels. The label list is
reshuffled after every batch to avoid position bias. Runs checkpoint
periodically and can resume after interruption.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
import random
import re
import time
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Protocol, Sequence

import requests

from .corpus import (
    Batch,
    Document,
    LabeledLine,
    LineKey,
    document_to_records,
    make_batches,
)

logger = logging.getLogger(__name__)

CLEAN_LABEL = "Clean"
API_KEY_ENV = "LINEQUAL_API_KEY"

_FENCE_RE = re.compile(r"```[a-zA-Z]*\n?|```")


class ResponseParseError(ValueError):
    """Base for labeling-response failures that trigger a retry."""


class UnparseableResponseError(ResponseParseError):
    """No JSON array of strings found in the response."""


class CountMismatchError(ResponseParseError):
    """The response array length does not match the batch size."""


class EndpointUnavailableError(RuntimeError):
    """The endpoint stayed unreachable through all retries."""


class TranscriptExhaustedError(RuntimeError):
    """The mock transcript ran out of responses."""


def canonical_key(name: str) -> str:
    """Case-folded, whitespace-collapsed form used for label identity."""
    return " ".join(name.split()).casefold()


def canonicalize_label(name: str) -> str:
    """Trim and collapse whitespace; normalize any casing of the Clean label."""
    cleaned = " ".join(name.split())
    if cleaned.casefold() == CLEAN_LABEL.casefold():
        return CLEAN_LABEL
    return cleaned


@dataclass(frozen=True)
class LabelAssignment:
    line: LineKey
    label: str


class LabelRegistry:
    """Dynamic, ordered set of labels with per-label line counts.

    "Clean" is always present. Label identity is the canonical key; the
    surface form of the first occurrence is kept for display. The
    presentation order is the shuffled order shown to the model.
    """

    def __init__(self) -> None:
        self._entries: dict[str, list[Any]] = {}  # canonical key -> [surface, count]
        self._entries[canonical_key(CLEAN_LABEL)] = [CLEAN_LABEL, 0]
        self.presentation_order: list[str] = [CLEAN_LABEL]

    def __contains__(self, name: str) -> bool:
        return canonical_key(name) in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def labels(self) -> list[tuple[str, int]]:
        return [(surface, count) for surface, count in self._entries.values()]

    def names(self) -> list[str]:
        return [surface for surface, _ in self._entries.values()]

    def count(self, name: str) -> int:
        entry = self._entries.get(canonical_key(name))
        return entry[1] if entry else 0

    def total(self) -> int:
        return sum(count for _, count in self._entries.values())

    def resolve(self, raw: str) -> str:
        """Canonical surface form for a raw label, registering it if new (count 0)."""
        cleaned = canonicalize_label(raw)
        key = canonical_key(cleaned)
        entry = self._entries.get(key)
        if entry is None:
            self._entries[key] = [cleaned, 0]
            self.presentation_order.append(cleaned)
            return cleaned
        return entry[0]

    def add(self, raw: str, count: int = 1) -> str:
        surface = self.resolve(raw)
        self._entries[canonical_key(surface)][1] += count
        return surface

    def remove(self, name: str) -> int:
        """Drop a label, returning its count. The Clean label cannot be removed."""
        key = canonical_key(name)
        if key == canonical_key(CLEAN_LABEL):
            raise ValueError("the Clean label cannot be removed")
        surface, count = self._entries.pop(key)
        self.presentation_order = [n for n in self.presentation_order if n != surface]
        return count

    def shuffle(self, rng: random.Random) -> None:
        order = self.names()
        rng.shuffle(order)
        self.presentation_order = order

    def to_dict(self) -> dict[str, Any]:
        return {
            "labels": [{"name": n, "count": c} for n, c in self.labels],
            "presentation_order": list(self.presentation_order),
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "LabelRegistry":
        registry = cls()
        for entry in payload["labels"]:
            name = entry["name"]
            key = canonical_key(name)
            if key in registry._entries:
                registry._entries[key][1] = int(entry["count"])
            else:
                registry._entries[key] = [name, int(entry["count"])]
        registry.presentation_order = list(
            payload.get("presentation_order", registry.names())
        )
        return registry

    def save(self, path: str | Path) -> None:
        _atomic_write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "LabelRegistry":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))


@dataclass
class LabelerConfig:
    endpoint: str = ""
    model_name: str = ""
    max_retries: int = 3
    request_timeout: float = 60.0
    max_concurrent_requests: int = 1
    rng_seed: int = 0
    batch_lines: int = 15
    max_segment_chars: int = 200
    segment_single_line_docs_only: bool = False
    checkpoint_docs: int = 100

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrent_requests < 1:
            raise ValueError("max_concurrent_requests must be >= 1")
        if self.checkpoint_docs < 1:
            raise ValueError("checkpoint_docs must be >= 1")

    @classmethod
    def from_file(cls, path: str | Path) -> "LabelerConfig":
        with open(path, "r", encoding="utf-8") as handle:
            return cls(**json.load(handle))


PROMPT_INSTRUCTIONS = (
    "You review individual lines of web-crawled text considered for a language"
    " model training corpus. Label each numbered line below.\n"
    'Use the label "Clean" for a line of fluent, human-written main content'
    " that is worth training on. For any other line, give a short descriptive"
    " label naming the kind of low-quality content it is (for example"
    ' "navigation menu" or "copyright notice"). Reuse a label from the known'
    " list whenever one fits; create a new short descriptive label only when"
    " none does. The lines are consecutive, so judge each line in the context"
    " of its neighbors."
)


def build_prompt(batch: Batch, registry: LabelRegistry) -> str:
    """Compose the labeling prompt for one batch of consecutive lines."""
    if not batch.lines:
        raise ValueError("batch must not be empty")
    numbered = "\n".join(
        f"{idx}. {rec.text}" for idx, rec in enumerate(batch.lines, start=1)
    )
    known = "\n".join(f"- {name}" for name in registry.presentation_order)
    count = len(batch.lines)
    return (
        f"{PROMPT_INSTRUCTIONS}\n\n"
        f"Lines:\n{numbered}\n\n"
        f"Known labels:\n{known}\n\n"
        f"Answer with a JSON array of exactly {count} label strings, one per"
        " numbered line, in order. Output nothing but the array."
    )


def parse_response(raw: str, batch_size: int) -> list[str]:
    """Extract a JSON array of ``batch_size`` label strings from a response.

    Tolerates surrounding prose and markdown fences. Raises
    :class:`UnparseableResponseError` when no string array can be found and
    :class:`CountMismatchError` when the array length is wrong.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    text = _FENCE_RE.sub("", raw)
    decoder = json.JSONDecoder()
    for start in (idx for idx, ch in enumerate(text) if ch == "["):
        try:
            value, _ = decoder.raw_decode(text[start:])
        except json.JSONDecodeError:
            continue
        if isinstance(value, list) and value and all(
            isinstance(item, str) and item.strip() for item in value
        ):
            if len(value) != batch_size:
                raise CountMismatchError(
                    f"expected {batch_size} labels, got {len(value)}"
                )
            return [canonicalize_label(item) for item in value]
    raise UnparseableResponseError("no JSON array of label strings in response")


def ingest_assignments(
    registry: LabelRegistry,
    assignments: Iterable[LabelAssignment],
    rng: random.Random,
) -> LabelRegistry:
    """Fold a batch of assignments into the registry, then reshuffle.

    New labels are appended with count 1; existing counts increment. The
    presentation order is reshuffled even for an empty batch (shuffle after
    every iteration).
    """
    for assignment in assignments:
        registry.add(assignment.label)
    registry.shuffle(rng)
    return registry


class ChatClient(Protocol):
    def complete(self, messages: list[dict[str, str]], request_index: int) -> str: ...


class TranscriptClient:
    """Mock client replaying canned responses; response k answers request k.

    Keying by request index (assigned at dispatch time) keeps replay
    deterministic even when requests run concurrently.
    """

    def __init__(self, responses: Sequence[str]):
        self._responses = list(responses)
        self.requests: list[list[dict[str, str]]] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "TranscriptClient":
        responses = []
        with open(path, "r", encoding="utf-8") as handle:
            for raw in handle:
                if raw.strip():
                    row = json.loads(raw)
                    responses.append(row["response"] if isinstance(row, dict) else row)
        return cls(responses)

    def complete(self, messages: list[dict[str, str]], request_index: int) -> str:
        if request_index >= len(self._responses):
            raise TranscriptExhaustedError(
                f"transcript has {len(self._responses)} responses,"
                f" request {request_index} requested"
            )
        self.requests.append(messages)
        return self._responses[request_index]


class HttpChatClient:
    """JSON-over-HTTP chat-completion client (temperature 0).

    The API key is read from the LINEQUAL_API_KEY environment variable when
    present.
    """

    def __init__(self, config: LabelerConfig, session: requests.Session | None = None):
        if not config.endpoint:
            raise ValueError("config.endpoint is required for the HTTP client")
        self._config = config
        self._session = session or requests.Session()

    def complete(self, messages: list[dict[str, str]], request_index: int) -> str:
        payload = {
            "model": self._config.model_name,
            "messages": messages,
            "temperature": 0,
        }
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        response = self._session.post(
            self._config.endpoint,
            json=payload,
            headers=headers,
            timeout=self._config.request_timeout,
        )
        response.raise_for_status()
        body = response.json()
        return body["choices"][0]["message"]["content"]


def _atomic_write_json(path: str | Path, payload: Any) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, ensure_ascii=False)
        handle.flush()
        os.fsync(handle.fileno())
    os.replace(tmp, path)


@dataclass
class _RunState:
    docs_done: int = 0
    lines_done: int = 0
    requests_issued: int = 0


class _Checkpoint:
    """Resumable run state: progress counters, registry, and rng state."""

    def __init__(self, path: Path):
        self.path = path

    def save(self, state: _RunState, registry: LabelRegistry, rng: random.Random) -> None:
        rng_state = rng.getstate()
        _atomic_write_json(
            self.path,
            {
                "docs_done": state.docs_done,
                "lines_done": state.lines_done,
                "requests_issued": state.requests_issued,
                "registry": registry.to_dict(),
                "rng_state": [rng_state[0], list(rng_state[1]), rng_state[2]],
            },
        )

    def load(self) -> tuple[_RunState, LabelRegistry, tuple]:
        with open(self.path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
        state = _RunState(
            docs_done=payload["docs_done"],
            lines_done=payload["lines_done"],
            requests_issued=payload["requests_issued"],
        )
        registry = LabelRegistry.from_dict(payload["registry"])
        raw = payload["rng_state"]
        rng_state = (raw[0], tuple(raw[1]), raw[2])
        return state, registry, rng_state


def _truncate_jsonl(path: Path, keep_lines: int) -> None:
    if not path.exists():
        return
    offset = 0
    kept = 0
    with open(path, "rb") as handle:
        for raw in handle:
            if kept == keep_lines:
                break
            kept += 1
            offset += len(raw)
    with open(path, "ab") as handle:
        handle.truncate(offset)


def _doc_batches(doc: Document, config: LabelerConfig) -> list[Batch]:
    records = document_to_records(
        doc,
        max_segment_chars=config.max_segment_chars,
        single_line_docs_only=config.segment_single_line_docs_only,
    )
    return make_batches(records, config.batch_lines)


def label_corpus(
    docs: Iterable[Document],
    config: LabelerConfig,
    out_path: str | Path,
    client: ChatClient | None = None,
    resume: bool = True,
) -> LabelRegistry:
    """Label every line of every document, writing a labeled-corpus JSONL file.

    Batches are dispatched with up to ``max_concurrent_requests`` in flight,
    but responses are ingested strictly in dispatch order by this (single)
    consumer thread, so label creation and registry shuffling stay
    deterministic under a fixed seed and a deterministic client.

    Progress checkpoints land every ``checkpoint_docs`` documents; with
    ``resume`` the run picks up from the last checkpoint. The final registry
    snapshot is written next to the output as ``<out>.registry.json``.
    """
    out_path = Path(out_path)
    registry_path = out_path.with_name(out_path.name + ".registry.json")
    checkpoint = _Checkpoint(out_path.with_name(out_path.name + ".checkpoint.json"))

    if client is None:
        client = HttpChatClient(config)

    rng = random.Random(config.rng_seed)
    registry = LabelRegistry()
    state = _RunState()

    doc_iter = iter(docs)
    if resume and checkpoint.path.exists():
        state, registry, rng_state = checkpoint.load()
        rng.setstate(rng_state)
        _truncate_jsonl(out_path, state.lines_done)
        for _ in range(state.docs_done):
            next(doc_iter)
        logger.info(
            "resuming labeling at document %d (%d lines already labeled)",
            state.docs_done,
            state.lines_done,
        )
        out_handle = open(out_path, "a", encoding="utf-8")
    else:
        out_handle = open(out_path, "w", encoding="utf-8")

    executor = ThreadPoolExecutor(max_workers=config.max_concurrent_requests)
    # (batch, doc_ordinal) pairs with their in-flight responses, consumed FIFO
    window: deque[tuple[Batch, int, Future[str]]] = deque()
    request_counter = itertools.count(state.requests_issued)

    def call_with_transport_retry(prompt: str, request_index: int) -> str:
        messages = [{"role": "user", "content": prompt}]
        delay = 1.0
        for attempt in range(config.max_retries + 1):
            try:
                return client.complete(messages, request_index)
            except (requests.RequestException, ConnectionError) as exc:
                if attempt == config.max_retries:
                    raise EndpointUnavailableError(
                        f"endpoint unreachable after {attempt + 1} attempts: {exc}"
                    ) from exc
                logger.warning("transport error (attempt %d): %s", attempt + 1, exc)
                time.sleep(delay)
                delay = min(delay * 2, 30.0)
        raise AssertionError("unreachable")

    def dispatch(batch: Batch, doc_ordinal: int) -> None:
        request_index = next(request_counter)
        state.requests_issued = request_index + 1
        prompt = build_prompt(batch, registry)
        future = executor.submit(call_with_transport_retry, prompt, request_index)
        window.append((batch, doc_ordinal, future))

    def labels_for(batch: Batch, raw: str) -> list[str]:
        size = len(batch.lines)
        attempt = 0
        while True:
            try:
                return parse_response(raw, size)
            except ResponseParseError as exc:
                attempt += 1
                if attempt > config.max_retries:
                    logger.warning(
                        "batch %s failed after %d attempts (%s); labeling its"
                        " %d lines Clean",
                        batch.lines[0].key,
                        attempt,
                        exc,
                        size,
                    )
                    return [CLEAN_LABEL] * size
                request_index = next(request_counter)
                state.requests_issued = request_index + 1
                raw = call_with_transport_retry(
                    build_prompt(batch, registry), request_index
                )

    last_checkpointed_doc = state.docs_done

    def consume_one() -> None:
        batch, doc_ordinal, future = window.popleft()
        labels = labels_for(batch, future.result())
        assignments = [
            LabelAssignment(rec.key, registry.resolve(label))
            for rec, label in zip(batch.lines, labels)
        ]
        for rec, assignment in zip(batch.lines, assignments):
            row = {
                "doc_id": rec.doc_id,
                "line_index": rec.line_index,
                "segment_index": rec.segment_index,
                "text": rec.text,
                "label": assignment.label,
            }
            out_handle.write(json.dumps(row, ensure_ascii=False) + "\n")
        ingest_assignments(registry, assignments, rng)
        state.lines_done += len(batch.lines)
        state.docs_done = doc_ordinal

    def checkpoint_now() -> None:
        out_handle.flush()
        os.fsync(out_handle.fileno())
        checkpoint.save(state, registry, rng)

    try:
        doc_ordinal = state.docs_done
        for doc in doc_iter:
            doc_ordinal += 1
            for batch in _doc_batches(doc, config):
                while len(window) >= config.max_concurrent_requests:
                    consume_one()
                dispatch(batch, doc_ordinal)
            # batches of a document may still be in flight; doc_ordinal is
            # recorded with each batch so progress tracks the consumer
            if doc_ordinal - last_checkpointed_doc >= config.checkpoint_docs:
                while window:
                    consume_one()
                checkpoint_now()
                last_checkpointed_doc = doc_ordinal
        while window:
            consume_one()
        checkpoint_now()
    finally:
        executor.shutdown(wait=False, cancel_futures=True)
        out_handle.close()

    total = registry.total()
    if total != state.lines_done:
        raise AssertionError(
            f"registry counts sum to {total}, expected {state.lines_done}"
        )
    registry.save(registry_path)
    return registry
