"""Review service: label-verification queues and agreement sessions over HTTP.

Annotators pull items one at a time, submit verdicts, and watch live
summaries (per-label majority tallies for verification queues, live kappa
for agreement sessions). Every verdict is appended to a write-ahead log and
fsynced before it is acknowledged, so acknowledged state survives restarts.
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from . import agreement as agreement_mod
from .taxonomy import CATEGORIES

logger = logging.getLogger(__name__)

KIND_VERIFICATION = "label_verification"
KIND_IAA = "iaa"
DEFAULT_SAMPLE_SIZE = 20
CONTEXT_LINES = 2


class ServiceError(Exception):
    def __init__(self, status_code: int, detail: str):
        super().__init__(detail)
        self.status_code = status_code
        self.detail = detail


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


@dataclass
class ReviewSession:
    session_id: str
    kind: str
    created_at: str
    items: list[dict[str, Any]]
    # annotator -> item_id -> payload (+ "ts")
    verdicts: dict[str, dict[int, dict[str, Any]]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def answered_by(self, annotator: str) -> set[int]:
        return set(self.verdicts.get(annotator, {}))


class ReviewStore:
    """In-memory session state behind a single-writer write-ahead log.

    Mutations append an event to ``events.log`` (flushed and fsynced) before
    they touch memory; startup replays the log.
    """

    def __init__(self, corpus_rows: list[dict[str, Any]], state_dir: str | Path):
        self._rows = corpus_rows
        self._by_doc: dict[str, list[int]] = {}
        self._by_label: dict[str, list[int]] = {}
        for position, row in enumerate(corpus_rows):
            self._by_doc.setdefault(row["doc_id"], []).append(position)
            self._by_label.setdefault(row["label"], []).append(position)
        self._sessions: dict[str, ReviewSession] = {}
        self._lock = threading.Lock()
        self._state_dir = Path(state_dir)
        self._state_dir.mkdir(parents=True, exist_ok=True)
        self._log_path = self._state_dir / "events.log"
        self._replay()
        self._log = open(self._log_path, "a", encoding="utf-8")

    def close(self) -> None:
        self._log.close()

    # ------------------------------------------------------------------ log

    def _replay(self) -> None:
        if not self._log_path.exists():
            return
        count = 0
        with open(self._log_path, "r", encoding="utf-8") as handle:
            for raw in handle:
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    event = json.loads(raw)
                except json.JSONDecodeError:
                    logger.warning("skipping truncated trailing log record")
                    continue
                self._apply(event)
                count += 1
        if count:
            logger.info("replayed %d events from %s", count, self._log_path)

    def _append(self, event: dict[str, Any]) -> None:
        self._log.write(json.dumps(event, ensure_ascii=False) + "\n")
        self._log.flush()
        os.fsync(self._log.fileno())

    def _apply(self, event: dict[str, Any]) -> None:
        if event["event"] == "create_session":
            payload = event["session"]
            session = ReviewSession(
                session_id=payload["session_id"],
                kind=payload["kind"],
                created_at=payload["created_at"],
                items=payload["items"],
                warnings=payload.get("warnings", []),
            )
            self._sessions[session.session_id] = session
        elif event["event"] == "verdict":
            session = self._sessions[event["session_id"]]
            by_item = session.verdicts.setdefault(event["annotator_id"], {})
            by_item[int(event["item_id"])] = event["payload"]
        else:
            logger.warning("unknown event type %r ignored", event["event"])

    # ------------------------------------------------------------- sessions

    def list_sessions(self) -> list[dict[str, Any]]:
        with self._lock:
            return [self._summary(s) for s in self._sessions.values()]

    def get_session(self, session_id: str) -> ReviewSession:
        session = self._sessions.get(session_id)
        if session is None:
            raise ServiceError(404, f"unknown session {session_id!r}")
        return session

    def _item_context(self, position: int) -> tuple[list[str], list[str]]:
        row = self._rows[position]
        doc_positions = self._by_doc[row["doc_id"]]
        at = doc_positions.index(position)
        before = [self._rows[p]["text"] for p in doc_positions[max(0, at - CONTEXT_LINES) : at]]
        after = [self._rows[p]["text"] for p in doc_positions[at + 1 : at + 1 + CONTEXT_LINES]]
        return before, after

    def _item_dict(self, position: int, item_id: int, llm_label: str) -> dict[str, Any]:
        row = self._rows[position]
        before, after = self._item_context(position)
        return {
            "item_id": item_id,
            "doc_id": row["doc_id"],
            "line_index": row["line_index"],
            "segment_index": row["segment_index"],
            "text": row["text"],
            "llm_label": llm_label,
            "context_before": before,
            "context_after": after,
        }

    def create_verification_session(
        self,
        labels: list[str],
        sample_size: int = DEFAULT_SAMPLE_SIZE,
        seed: int = 0,
        session_id: str | None = None,
    ) -> dict[str, Any]:
        if sample_size < 1:
            raise ServiceError(400, "sample_size must be >= 1")
        if not labels:
            raise ServiceError(400, "labels must be non-empty")
        rng = random.Random(seed)
        items: list[dict[str, Any]] = []
        warnings: list[str] = []
        for label in labels:
            positions = self._by_label.get(label, [])
            if not positions:
                warnings.append(f"label {label!r} has no lines; skipped")
                continue
            chosen = sorted(rng.sample(positions, min(sample_size, len(positions))))
            if len(chosen) < sample_size:
                warnings.append(
                    f"label {label!r} has only {len(chosen)} lines"
                    f" (sample_size {sample_size})"
                )
            for position in chosen:
                items.append(self._item_dict(position, len(items), label))
        if not items:
            raise ServiceError(400, "no items: none of the labels has any lines")
        return self._create_session(KIND_VERIFICATION, items, warnings, session_id)

    def create_iaa_session(
        self,
        doc_count: int,
        seed: int = 0,
        session_id: str | None = None,
    ) -> dict[str, Any]:
        if doc_count < 1:
            raise ServiceError(400, "doc_count must be >= 1")
        doc_ids = list(self._by_doc)
        if doc_count > len(doc_ids):
            raise ServiceError(
                400, f"corpus has only {len(doc_ids)} documents, {doc_count} requested"
            )
        missing_category = any("category" not in row for row in self._rows)
        if missing_category:
            raise ServiceError(
                400, "agreement sessions need categorized lines (refine the corpus first)"
            )
        rng = random.Random(seed)
        sampled = set(rng.sample(doc_ids, doc_count))
        items: list[dict[str, Any]] = []
        for doc_id in doc_ids:  # corpus order
            if doc_id not in sampled:
                continue
            for position in self._by_doc[doc_id]:
                items.append(
                    self._item_dict(position, len(items), self._rows[position]["category"])
                )
        return self._create_session(KIND_IAA, items, [], session_id)

    def _create_session(
        self,
        kind: str,
        items: list[dict[str, Any]],
        warnings: list[str],
        session_id: str | None,
    ) -> dict[str, Any]:
        with self._lock:
            session_id = session_id or f"{kind}-{len(self._sessions):04d}"
            if session_id in self._sessions:
                raise ServiceError(400, f"session {session_id!r} already exists")
            payload = {
                "session_id": session_id,
                "kind": kind,
                "created_at": _now(),
                "items": items,
                "warnings": warnings,
            }
            self._append({"event": "create_session", "session": payload})
            self._apply({"event": "create_session", "session": payload})
            return self._summary(self._sessions[session_id])

    # -------------------------------------------------------------- queue

    def next_item(self, session_id: str, annotator: str) -> dict[str, Any]:
        with self._lock:
            session = self.get_session(session_id)
            answered = session.answered_by(annotator)
            for item in session.items:
                if item["item_id"] not in answered:
                    return {"done": False, "item": item}
            return {"done": True, "summary": self._summary(session)}

    def submit_verdict(
        self,
        session_id: str,
        annotator: str,
        item_id: int,
        payload: dict[str, Any],
    ) -> dict[str, Any]:
        with self._lock:
            session = self.get_session(session_id)
            if not isinstance(item_id, int) or not 0 <= item_id < len(session.items):
                raise ServiceError(404, f"unknown item {item_id!r}")
            self._validate_payload(session, payload)
            replaced = item_id in session.verdicts.get(annotator, {})
            stored = dict(payload)
            stored["ts"] = _now()
            event = {
                "event": "verdict",
                "session_id": session_id,
                "annotator_id": annotator,
                "item_id": item_id,
                "payload": stored,
            }
            self._append(event)  # durable before acknowledgment
            self._apply(event)
            summary = self._summary(session)
            summary["replaced"] = replaced
            return summary

    @staticmethod
    def _validate_payload(session: ReviewSession, payload: dict[str, Any]) -> None:
        if not isinstance(payload, dict):
            raise ServiceError(400, "verdict payload must be an object")
        is_verification_payload = "low_quality" in payload
        is_iaa_payload = "agrees" in payload
        if session.kind == KIND_VERIFICATION:
            if is_iaa_payload and not is_verification_payload:
                raise ServiceError(
                    409, "agree/disagree payload sent to a verification session"
                )
            if not isinstance(payload.get("low_quality"), bool):
                raise ServiceError(400, "verification verdict needs boolean 'low_quality'")
        else:
            if is_verification_payload and not is_iaa_payload:
                raise ServiceError(
                    409, "low/high-quality payload sent to an agreement session"
                )
            agrees = payload.get("agrees")
            if not isinstance(agrees, bool):
                raise ServiceError(400, "agreement verdict needs boolean 'agrees'")
            corrected = payload.get("corrected_label")
            if agrees and corrected:
                raise ServiceError(400, "corrected_label is only allowed on disagreement")
            if not agrees:
                if not corrected:
                    raise ServiceError(400, "disagreement requires corrected_label")
                if corrected not in CATEGORIES:
                    raise ServiceError(
                        400, f"corrected_label must be one of the {len(CATEGORIES)} categories"
                    )

    # ------------------------------------------------------------ summaries

    def summary(self, session_id: str) -> dict[str, Any]:
        with self._lock:
            return self._summary(self.get_session(session_id))

    def _summary(self, session: ReviewSession) -> dict[str, Any]:
        base = {
            "session_id": session.session_id,
            "kind": session.kind,
            "created_at": session.created_at,
            "total_items": len(session.items),
            "completed": {
                annotator: len(by_item)
                for annotator, by_item in sorted(session.verdicts.items())
            },
            "warnings": session.warnings,
        }
        if session.kind == KIND_VERIFICATION:
            base["labels"] = self._verification_tallies(session)
        else:
            base["kappa"] = self._live_kappa(session)
        return base

    @staticmethod
    def _verification_tallies(session: ReviewSession) -> dict[str, dict[str, Any]]:
        tallies: dict[str, dict[str, Any]] = {}
        for item in session.items:
            label = item["llm_label"]
            tallies.setdefault(
                label,
                {"sampled": 0, "answered": 0, "low_quality": 0, "high_quality": 0},
            )["sampled"] += 1
        for by_item in session.verdicts.values():
            for item_id, payload in by_item.items():
                label = session.items[item_id]["llm_label"]
                tally = tallies[label]
                tally["answered"] += 1
                if payload["low_quality"]:
                    tally["low_quality"] += 1
                else:
                    tally["high_quality"] += 1
        for tally in tallies.values():
            if tally["answered"] == 0:
                tally["majority"] = "pending"
            elif tally["high_quality"] * 2 > tally["answered"]:
                tally["majority"] = "remap_to_clean"
            else:
                tally["majority"] = "keep"
        return tallies

    @staticmethod
    def _live_kappa(session: ReviewSession) -> dict[str, dict[str, float] | None]:
        kappa: dict[str, dict[str, float] | None] = {}
        for annotator, by_item in sorted(session.verdicts.items()):
            if not by_item:
                kappa[annotator] = None
                continue
            indices = sorted(by_item)
            llm = [session.items[i]["llm_label"] for i in indices]
            human = [
                llm[pos]
                if by_item[i]["agrees"]
                else by_item[i]["corrected_label"]
                for pos, i in enumerate(indices)
            ]
            kappa[annotator] = {
                "full": agreement_mod.cohens_kappa(human, llm),
                "binary": agreement_mod.cohens_kappa(
                    [agreement_mod.binarize(l) for l in human],
                    [agreement_mod.binarize(l) for l in llm],
                ),
            }
        return kappa

    # -------------------------------------------------------------- export

    def export(self, session_id: str, partial: bool = False) -> tuple[str, str]:
        """Render session results: (media_type, body).

        Verification sessions export a taxonomy-verdicts JSONL file; agreement
        sessions export an annotation-session JSON file.
        """
        with self._lock:
            session = self.get_session(session_id)
            answered = set()
            for by_item in session.verdicts.values():
                answered.update(by_item)
            remaining = len(session.items) - len(answered)
            if remaining and not partial:
                raise ServiceError(
                    400,
                    f"session incomplete: {remaining} of {len(session.items)} items"
                    " unanswered (pass partial=1 to export anyway)",
                )
            if session.kind == KIND_VERIFICATION:
                return "application/jsonl", self._export_verification(session)
            return "application/json", self._export_iaa(session)

    def _export_verification(self, session: ReviewSession) -> str:
        tallies = self._verification_tallies(session)
        votes_ts: dict[str, str] = {}
        voters: dict[str, set[str]] = {}
        reviewed: dict[str, set[int]] = {}
        for annotator, by_item in session.verdicts.items():
            for item_id, payload in by_item.items():
                label = session.items[item_id]["llm_label"]
                voters.setdefault(label, set()).add(annotator)
                reviewed.setdefault(label, set()).add(item_id)
                votes_ts[label] = max(votes_ts.get(label, ""), payload["ts"])
        evidence: dict[str, list[dict[str, Any]]] = {label: [] for label in tallies}
        for item in session.items:
            label = item["llm_label"]
            if item["item_id"] in reviewed.get(label, set()):
                evidence[label].append(
                    {
                        "doc_id": item["doc_id"],
                        "line_index": item["line_index"],
                        "segment_index": item["segment_index"],
                    }
                )
        rows = []
        for label, tally in tallies.items():
            # unanswered labels fall below quorum and default to keep
            decision = "keep" if tally["majority"] in ("keep", "pending") else "remap_to_clean"
            rows.append(
                {
                    "label": label,
                    "decision": decision,
                    "evidence": evidence[label],
                    "reviewer": ",".join(sorted(voters.get(label, {session.session_id}))),
                    "timestamp": votes_ts.get(label, session.created_at),
                }
            )
        return "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in rows)

    def _export_iaa(self, session: ReviewSession) -> str:
        payload = {
            "session_id": session.session_id,
            "items": [
                {
                    "doc_id": item["doc_id"],
                    "line_index": item["line_index"],
                    "segment_index": item["segment_index"],
                    "text": item["text"],
                    "llm_label": item["llm_label"],
                }
                for item in session.items
            ],
            "verdicts": {
                annotator: {
                    str(item_id): {
                        "agrees": payload["agrees"],
                        "corrected_label": payload.get("corrected_label"),
                    }
                    for item_id, payload in by_item.items()
                }
                for annotator, by_item in session.verdicts.items()
            },
        }
        return json.dumps(payload, ensure_ascii=False, indent=2)


def load_corpus_rows(path: str | Path) -> list[dict[str, Any]]:
    """Rows of a labeled (or categorized) corpus JSONL file."""
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for raw in handle:
            if raw.strip():
                rows.append(json.loads(raw))
    for row in rows:
        for required in ("doc_id", "line_index", "segment_index", "text", "label"):
            if required not in row:
                raise ValueError(f"corpus row missing field {required!r}")
    return rows


def create_app(store: ReviewStore) -> FastAPI:
    app = FastAPI(title="linequal review service")
    app.state.store = store

    @app.exception_handler(ServiceError)
    async def service_error_handler(_request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status_code, content={"detail": exc.detail})

    @app.get("/sessions")
    def list_sessions():
        return {"sessions": store.list_sessions()}

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        body = await _json_body(request)
        kind = body.get("kind")
        if kind == KIND_VERIFICATION:
            return store.create_verification_session(
                labels=body.get("labels", []),
                sample_size=int(body.get("sample_size", DEFAULT_SAMPLE_SIZE)),
                seed=int(body.get("seed", 0)),
                session_id=body.get("session_id"),
            )
        if kind == KIND_IAA:
            return store.create_iaa_session(
                doc_count=int(body.get("doc_count", 0)),
                seed=int(body.get("seed", 0)),
                session_id=body.get("session_id"),
            )
        raise ServiceError(400, f"kind must be {KIND_VERIFICATION!r} or {KIND_IAA!r}")

    @app.get("/sessions/{session_id}/next")
    def next_item(session_id: str, annotator: str = ""):
        if not annotator:
            raise ServiceError(400, "annotator query parameter is required")
        return store.next_item(session_id, annotator)

    @app.post("/sessions/{session_id}/verdicts")
    async def submit_verdict(session_id: str, request: Request):
        body = await _json_body(request)
        annotator = body.get("annotator_id")
        if not annotator:
            raise ServiceError(400, "annotator_id is required")
        if "item_id" not in body:
            raise ServiceError(400, "item_id is required")
        payload = body.get("payload")
        if not isinstance(payload, dict):
            raise ServiceError(400, "payload object is required")
        return store.submit_verdict(session_id, annotator, body["item_id"], payload)

    @app.get("/sessions/{session_id}/summary")
    def summary(session_id: str):
        return store.summary(session_id)

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str, partial: bool = False):
        media_type, body = store.export(session_id, partial=partial)
        if media_type == "application/json":
            return JSONResponse(content=json.loads(body))
        return PlainTextResponse(content=body, media_type=media_type)

    async def _json_body(request: Request) -> dict[str, Any]:
        try:
            body = await request.json()
        except Exception:
            raise ServiceError(400, "request body must be JSON") from None
        if not isinstance(body, dict):
            raise ServiceError(400, "request body must be a JSON object")
        return body

    return app


def serve(
    data_path: str | Path,
    state_dir: str | Path,
    host: str = "127.0.0.1",
    port: int = 8080,
) -> None:
    import uvicorn

    store = ReviewStore(load_corpus_rows(data_path), state_dir)
    uvicorn.run(create_app(store), host=host, port=port, log_level="info")
