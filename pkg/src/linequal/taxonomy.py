"""Label refinement and grouping into the nine quality categories.

Raw descriptive labels are refined in two passes: infrequent labels fold into
"Clean", and human review verdicts remap labels whose sampled lines turned
out to be mostly high quality. The surviving labels are then grouped by a
category scheme file (authored externally) into nine fixed categories.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

from .corpus import LabeledLine, LineKey
from .labeling import CLEAN_LABEL, LabelRegistry

CATEGORIES = (
    "Clean",
    "Formatting, Style & Errors",
    "Bibliographical & Citation References",
    "Promotional & Spam Content",
    "Contact & Identification Information",
    "Navigation & Interface Elements",
    "Technical Specifications & Metadata",
    "Legal & Administrative Content",
    "Offensive or Inappropriate Content",
)

KEEP = "keep"
REMAP_TO_CLEAN = "remap_to_clean"


class SchemeError(ValueError):
    """Base for category-scheme validation failures."""


class UnassignedLabelError(SchemeError):
    def __init__(self, labels: Sequence[str]):
        super().__init__(f"labels not assigned to any category: {sorted(labels)}")
        self.labels = sorted(labels)


class DuplicateAssignmentError(SchemeError):
    def __init__(self, labels: Sequence[str]):
        super().__init__(f"labels assigned to multiple categories: {sorted(labels)}")
        self.labels = sorted(labels)


class UnknownLabelError(ValueError):
    """A verdict or line refers to a label that is not in the registry/scheme."""


@dataclass(frozen=True)
class CategorizedLine:
    doc_id: str
    line_index: int
    segment_index: int
    text: str
    label: str
    category: str

    @property
    def key(self) -> LineKey:
        return (self.doc_id, self.line_index, self.segment_index)


@dataclass(frozen=True)
class VerificationVerdict:
    """Outcome of manually reviewing sampled lines of one label."""

    label: str
    decision: str  # keep | remap_to_clean
    evidence: tuple[LineKey, ...]
    reviewer: str
    timestamp: str  # ISO-8601 UTC; later verdicts supersede earlier ones

    def __post_init__(self) -> None:
        if self.decision not in (KEEP, REMAP_TO_CLEAN):
            raise ValueError(f"unknown decision {self.decision!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "decision": self.decision,
            "evidence": [
                {"doc_id": d, "line_index": li, "segment_index": si}
                for d, li, si in self.evidence
            ],
            "reviewer": self.reviewer,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, row: dict[str, Any]) -> "VerificationVerdict":
        return cls(
            label=row["label"],
            decision=row["decision"],
            evidence=tuple(
                (e["doc_id"], int(e["line_index"]), int(e["segment_index"]))
                for e in row.get("evidence", [])
            ),
            reviewer=row.get("reviewer", ""),
            timestamp=row.get("timestamp", ""),
        )


def read_verdicts(path: str | Path) -> list[VerificationVerdict]:
    verdicts = []
    with open(path, "r", encoding="utf-8") as handle:
        for raw in handle:
            if raw.strip():
                verdicts.append(VerificationVerdict.from_dict(json.loads(raw)))
    return verdicts


def write_verdicts(verdicts: Iterable[VerificationVerdict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for verdict in verdicts:
            handle.write(json.dumps(verdict.to_dict(), ensure_ascii=False) + "\n")


def _rebuild_registry(lines: Sequence[LabeledLine]) -> LabelRegistry:
    registry = LabelRegistry()
    for line in lines:
        registry.add(line.label)
    return registry


def remap_infrequent(
    labeled: Sequence[LabeledLine],
    registry: LabelRegistry,
    min_count: int = 2,
) -> tuple[list[LabeledLine], LabelRegistry]:
    """Relabel every label with fewer than ``min_count`` lines to Clean.

    Returns the updated corpus and a registry rebuilt from it; the total line
    count never changes.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    doomed = {
        name
        for name, count in registry.labels
        if count < min_count and name != CLEAN_LABEL
    }
    if not doomed:
        return list(labeled), registry
    updated = [
        LabeledLine(l.doc_id, l.line_index, l.segment_index, l.text, CLEAN_LABEL)
        if l.label in doomed
        else l
        for l in labeled
    ]
    return updated, _rebuild_registry(updated)


def resolve_verdicts(
    verdicts: Iterable[VerificationVerdict],
) -> dict[str, VerificationVerdict]:
    """Collapse verdicts to one per label: latest timestamp wins, ties broken
    by the lexicographically greatest reviewer id."""
    final: dict[str, VerificationVerdict] = {}
    for verdict in verdicts:
        current = final.get(verdict.label)
        if current is None or (verdict.timestamp, verdict.reviewer) >= (
            current.timestamp,
            current.reviewer,
        ):
            final[verdict.label] = verdict
    return final


def apply_verdicts(
    labeled: Sequence[LabeledLine],
    registry: LabelRegistry,
    verdicts: Iterable[VerificationVerdict],
) -> tuple[list[LabeledLine], LabelRegistry]:
    """Apply review verdicts: remap-to-clean labels lose all their lines to Clean.

    Duplicate verdicts for one label are collapsed first (idempotent); a
    verdict naming a label absent from the registry raises
    :class:`UnknownLabelError`.
    """
    final = resolve_verdicts(verdicts)
    unknown = [label for label in final if label not in registry]
    if unknown:
        raise UnknownLabelError(f"verdicts on unknown labels: {sorted(unknown)}")
    doomed = {
        label for label, verdict in final.items() if verdict.decision == REMAP_TO_CLEAN
    }
    if not doomed:
        return list(labeled), registry
    updated = [
        LabeledLine(l.doc_id, l.line_index, l.segment_index, l.text, CLEAN_LABEL)
        if l.label in doomed
        else l
        for l in labeled
    ]
    return updated, _rebuild_registry(updated)


@dataclass(frozen=True)
class CategoryScheme:
    """Many-to-one map from descriptive labels to the nine fixed categories."""

    categories: tuple[str, ...]
    mapping: dict[str, str]

    def category_for(self, label: str) -> str:
        try:
            return self.mapping[label]
        except KeyError:
            raise UnknownLabelError(f"label {label!r} has no category") from None

    def to_dict(self) -> dict[str, list[str]]:
        grouped: dict[str, list[str]] = {category: [] for category in self.categories}
        for label, category in self.mapping.items():
            grouped[category].append(label)
        return grouped


def build_category_scheme(
    grouped: dict[str, Sequence[str]],
    known_labels: Iterable[str] | None = None,
) -> CategoryScheme:
    """Validate a {category: [labels...]} grouping and build the scheme.

    Mirrors the two failure modes of machine-generated groupings: labels left
    out (:class:`UnassignedLabelError`, checked against ``known_labels``) and
    labels placed in more than one category (:class:`DuplicateAssignmentError`).
    """
    unknown_categories = sorted(set(grouped) - set(CATEGORIES))
    if unknown_categories:
        raise SchemeError(f"unknown categories in scheme: {unknown_categories}")
    missing_categories = sorted(set(CATEGORIES) - set(grouped))
    if missing_categories:
        raise SchemeError(f"scheme is missing categories: {missing_categories}")

    mapping: dict[str, str] = {}
    duplicates = []
    for category in CATEGORIES:
        for label in grouped[category]:
            if label in mapping and mapping[label] != category:
                duplicates.append(label)
            elif label in mapping:
                continue
            else:
                mapping[label] = category
    if duplicates:
        raise DuplicateAssignmentError(duplicates)

    if mapping.get(CLEAN_LABEL, "Clean") != "Clean":
        raise SchemeError('the "Clean" label must map to the Clean category')
    mapping.setdefault(CLEAN_LABEL, "Clean")

    if known_labels is not None:
        unassigned = sorted(set(known_labels) - set(mapping))
        if unassigned:
            raise UnassignedLabelError(unassigned)
    return CategoryScheme(categories=CATEGORIES, mapping=mapping)


def load_category_scheme(
    path: str | Path, known_labels: Iterable[str] | None = None
) -> CategoryScheme:
    """Load and validate a JSON {category: [labels...]} scheme file."""
    with open(path, "r", encoding="utf-8") as handle:
        grouped = json.load(handle)
    if not isinstance(grouped, dict):
        raise SchemeError("scheme file must hold a JSON object of category -> labels")
    return build_category_scheme(grouped, known_labels)


def categorize_corpus(
    labeled: Sequence[LabeledLine], scheme: CategoryScheme
) -> tuple[list[CategorizedLine], dict[str, int]]:
    """Attach a category to every line; returns the corpus and per-category tally."""
    categorized = []
    tally = Counter({category: 0 for category in scheme.categories})
    for line in labeled:
        category = scheme.category_for(line.label)
        categorized.append(
            CategorizedLine(
                line.doc_id,
                line.line_index,
                line.segment_index,
                line.text,
                line.label,
                category,
            )
        )
        tally[category] += 1
    return categorized, dict(tally)


def categorized_line_to_dict(line: CategorizedLine) -> dict[str, Any]:
    return {
        "doc_id": line.doc_id,
        "line_index": line.line_index,
        "segment_index": line.segment_index,
        "text": line.text,
        "label": line.label,
        "category": line.category,
    }


def categorized_line_from_dict(row: dict[str, Any]) -> CategorizedLine:
    return CategorizedLine(
        doc_id=row["doc_id"],
        line_index=int(row["line_index"]),
        segment_index=int(row["segment_index"]),
        text=row["text"],
        label=row.get("label", row["category"]),
        category=row["category"],
    )


def read_categorized_corpus(path: str | Path) -> list[CategorizedLine]:
    lines = []
    with open(path, "r", encoding="utf-8") as handle:
        for raw in handle:
            if raw.strip():
                lines.append(categorized_line_from_dict(json.loads(raw)))
    return lines


def write_categorized_corpus(
    lines: Iterable[CategorizedLine], path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for line in lines:
            handle.write(
                json.dumps(categorized_line_to_dict(line), ensure_ascii=False) + "\n"
            )
