"""Inter-annotator agreement sessions and Cohen's kappa.

Annotators review lines with their machine-assigned category and either agree
or supply a corrected category. Agreement against the machine labels is
reported as Cohen's kappa over the full category set and over the binary
Clean / Non-clean collapse.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .corpus import Document, LineKey
from .labeling import CLEAN_LABEL
from .taxonomy import CATEGORIES, CategorizedLine

logger = logging.getLogger(__name__)

NON_CLEAN = "Non-clean"


class IncompleteSessionError(ValueError):
    """An annotator has unanswered items; carries the missing indices."""

    def __init__(self, annotator: str, missing: Sequence[int]):
        shown = ", ".join(map(str, missing[:10]))
        more = "" if len(missing) <= 10 else f" (+{len(missing) - 10} more)"
        super().__init__(
            f"annotator {annotator!r} has {len(missing)} unanswered items: {shown}{more}"
        )
        self.annotator = annotator
        self.missing = list(missing)


@dataclass(frozen=True)
class SessionItem:
    doc_id: str
    line_index: int
    segment_index: int
    text: str
    llm_label: str

    @property
    def key(self) -> LineKey:
        return (self.doc_id, self.line_index, self.segment_index)


@dataclass(frozen=True)
class ItemVerdict:
    agrees: bool
    corrected_label: str | None = None

    def __post_init__(self) -> None:
        if self.agrees and self.corrected_label is not None:
            raise ValueError("corrected_label is only allowed on disagreement")
        if not self.agrees:
            if self.corrected_label is None:
                raise ValueError("disagreement requires a corrected_label")
            if self.corrected_label not in CATEGORIES:
                raise ValueError(
                    f"corrected_label must be one of the {len(CATEGORIES)} categories"
                )


@dataclass
class AnnotationSession:
    session_id: str
    items: list[SessionItem]
    verdicts: dict[str, dict[int, ItemVerdict]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "items": [
                {
                    "doc_id": item.doc_id,
                    "line_index": item.line_index,
                    "segment_index": item.segment_index,
                    "text": item.text,
                    "llm_label": item.llm_label,
                }
                for item in self.items
            ],
            "verdicts": {
                annotator: {
                    str(index): {
                        "agrees": verdict.agrees,
                        "corrected_label": verdict.corrected_label,
                    }
                    for index, verdict in by_item.items()
                }
                for annotator, by_item in self.verdicts.items()
            },
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "AnnotationSession":
        return cls(
            session_id=payload["session_id"],
            items=[
                SessionItem(
                    doc_id=item["doc_id"],
                    line_index=int(item["line_index"]),
                    segment_index=int(item["segment_index"]),
                    text=item["text"],
                    llm_label=item["llm_label"],
                )
                for item in payload["items"]
            ],
            verdicts={
                annotator: {
                    int(index): ItemVerdict(
                        agrees=verdict["agrees"],
                        corrected_label=verdict.get("corrected_label"),
                    )
                    for index, verdict in by_item.items()
                }
                for annotator, by_item in payload.get("verdicts", {}).items()
            },
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, ensure_ascii=False, indent=2)

    @classmethod
    def load(cls, path: str | Path) -> "AnnotationSession":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))


def create_session(
    docs: Sequence[Document],
    labels: Sequence[CategorizedLine],
    session_id: str = "iaa",
) -> AnnotationSession:
    """One item per labeled line of the sampled documents, in document order."""
    if not docs:
        raise ValueError("cannot create a session from an empty document sample")
    by_doc: dict[str, list[CategorizedLine]] = {}
    for line in labels:
        by_doc.setdefault(line.doc_id, []).append(line)
    items = []
    for doc in docs:
        doc_lines = sorted(
            by_doc.get(doc.id, []), key=lambda l: (l.line_index, l.segment_index)
        )
        if not doc_lines:
            raise ValueError(f"document {doc.id!r} has no labeled lines")
        for line in doc_lines:
            items.append(
                SessionItem(
                    doc_id=line.doc_id,
                    line_index=line.line_index,
                    segment_index=line.segment_index,
                    text=line.text,
                    llm_label=line.category,
                )
            )
    return AnnotationSession(session_id=session_id, items=items)


def record_verdict(
    session: AnnotationSession,
    annotator_id: str,
    item_index: int,
    agrees: bool,
    corrected_label: str | None = None,
) -> AnnotationSession:
    """Store one verdict; re-recording the same item replaces it (last write wins)."""
    if not 0 <= item_index < len(session.items):
        raise IndexError(f"item index {item_index} out of range")
    verdict = ItemVerdict(agrees=agrees, corrected_label=corrected_label)
    session.verdicts.setdefault(annotator_id, {})[item_index] = verdict
    return session


def cohens_kappa(labels_a: Sequence[str], labels_b: Sequence[str]) -> float:
    """Cohen's kappa between two equal-length label sequences.

    Computed from integer counts: kappa = (n*agree - S) / (n^2 - S) with
    S = sum over labels of marginal-count products. The degenerate case where
    chance agreement is 1 (both sequences constant and identical) returns 1.0
    on full agreement and 0.0 otherwise.
    """
    if len(labels_a) != len(labels_b):
        raise ValueError(
            f"label sequences differ in length: {len(labels_a)} vs {len(labels_b)}"
        )
    if not labels_a:
        raise ValueError("label sequences must be non-empty")
    n = len(labels_a)
    agreements = sum(1 for a, b in zip(labels_a, labels_b) if a == b)
    counts_a = Counter(labels_a)
    counts_b = Counter(labels_b)
    chance = sum(counts_a[label] * counts_b.get(label, 0) for label in counts_a)
    denominator = n * n - chance
    if denominator == 0:
        logger.info("degenerate kappa: both annotators constant and identical")
        return 1.0 if agreements == n else 0.0
    return (n * agreements - chance) / denominator


def binarize(label: str) -> str:
    return CLEAN_LABEL if label == CLEAN_LABEL else NON_CLEAN


@dataclass
class AgreementReport:
    per_annotator: dict[str, dict[str, float]]  # annotator -> {full, binary}
    average_full: float
    average_binary: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_annotator": self.per_annotator,
            "average_full": self.average_full,
            "average_binary": self.average_binary,
        }

    def to_text(self) -> str:
        annotators = sorted(self.per_annotator)
        width = max([len(a) for a in annotators] + [4])
        header = " " * 22 + "  ".join(a.rjust(width) for a in annotators)
        header += "  " + "Avg.".rjust(width)
        full_row = "All labels".ljust(22) + "  ".join(
            f"{self.per_annotator[a]['full']:.2f}".rjust(width) for a in annotators
        )
        full_row += "  " + f"{self.average_full:.2f}".rjust(width)
        binary_row = "Clean vs. non-clean".ljust(22) + "  ".join(
            f"{self.per_annotator[a]['binary']:.2f}".rjust(width) for a in annotators
        )
        binary_row += "  " + f"{self.average_binary:.2f}".rjust(width)
        return "\n".join([header, full_row, binary_row])


def annotator_labels(
    session: AnnotationSession, annotator: str, indices: Sequence[int] | None = None
) -> list[str]:
    """Reconstruct the annotator's label sequence: the machine label on
    agreement, the corrected label on disagreement."""
    verdicts = session.verdicts.get(annotator, {})
    if indices is None:
        indices = range(len(session.items))
    labels = []
    for index in indices:
        verdict = verdicts[index]
        item = session.items[index]
        labels.append(item.llm_label if verdict.agrees else verdict.corrected_label)
    return labels


def agreement_report(
    session: AnnotationSession, annotators: Sequence[str] | None = None
) -> AgreementReport:
    """Full-label and binary kappa per annotator versus the machine labels.

    Every reporting annotator must have answered every item; otherwise
    :class:`IncompleteSessionError` lists what is missing.
    """
    if annotators is None:
        annotators = sorted(session.verdicts)
    if not annotators:
        raise ValueError("no annotators with verdicts in session")
    llm = [item.llm_label for item in session.items]
    per_annotator = {}
    for annotator in annotators:
        answered = session.verdicts.get(annotator, {})
        missing = [i for i in range(len(session.items)) if i not in answered]
        if missing:
            raise IncompleteSessionError(annotator, missing)
        human = annotator_labels(session, annotator)
        per_annotator[annotator] = {
            "full": cohens_kappa(human, llm),
            "binary": cohens_kappa(
                [binarize(label) for label in human],
                [binarize(label) for label in llm],
            ),
        }
    return AgreementReport(
        per_annotator=per_annotator,
        average_full=sum(v["full"] for v in per_annotator.values()) / len(per_annotator),
        average_binary=sum(v["binary"] for v in per_annotator.values())
        / len(per_annotator),
    )
