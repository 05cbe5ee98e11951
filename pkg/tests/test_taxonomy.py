from __future__ import annotations

import json

import pytest

from linequal.corpus import LabeledLine
from linequal.labeling import LabelRegistry
from linequal.taxonomy import (
    CATEGORIES,
    CategoryScheme,
    DuplicateAssignmentError,
    SchemeError,
    UnassignedLabelError,
    UnknownLabelError,
    VerificationVerdict,
    apply_verdicts,
    build_category_scheme,
    categorize_corpus,
    load_category_scheme,
    read_verdicts,
    remap_infrequent,
    resolve_verdicts,
    write_verdicts,
)


def _lines(label_counts):
    """label_counts: list of (label, count) -> LabeledLines with stable keys."""
    lines = []
    for label, count in label_counts:
        for i in range(count):
            lines.append(
                LabeledLine(f"doc-{label}", len(lines), 0, f"{label} text {i}", label)
            )
    return lines


def _registry(lines):
    registry = LabelRegistry()
    for line in lines:
        registry.add(line.label)
    return registry


def _verdict(label, decision, reviewer="a1", timestamp="2026-01-01T00:00:00Z"):
    return VerificationVerdict(label, decision, (), reviewer, timestamp)


class TestRemapInfrequent:
    def test_singletons_folded_into_clean(self):
        lines = _lines([("Clean", 100), ("broken html", 5), ("weird spacing", 1)])
        registry = _registry(lines)
        updated, new_registry = remap_infrequent(lines, registry, min_count=2)
        assert len(updated) == len(lines)
        assert dict(new_registry.labels) == {"Clean": 101, "broken html": 5}
        assert sum(1 for l in updated if l.label == "Clean") == 101

    def test_min_count_one_is_identity(self):
        lines = _lines([("Clean", 3), ("x", 1)])
        registry = _registry(lines)
        updated, new_registry = remap_infrequent(lines, registry, min_count=1)
        assert updated == lines
        assert dict(new_registry.labels) == {"Clean": 3, "x": 1}

    def test_clean_never_removed_even_when_rare(self):
        lines = _lines([("Clean", 1), ("busy label", 10)])
        registry = _registry(lines)
        _, new_registry = remap_infrequent(lines, registry, min_count=5)
        assert "Clean" in new_registry
        assert dict(new_registry.labels) == {"Clean": 1, "busy label": 10}

    def test_clean_count_never_decreases(self):
        lines = _lines([("Clean", 10), ("a", 2), ("b", 1), ("c", 1)])
        registry = _registry(lines)
        updated, new_registry = remap_infrequent(lines, registry, min_count=2)
        assert new_registry.count("Clean") >= 10
        assert len(updated) == len(lines)


class TestApplyVerdicts:
    def test_remap_to_clean(self):
        lines = _lines([("Clean", 4), ("product name mention", 3)])
        registry = _registry(lines)
        updated, new_registry = apply_verdicts(
            lines, registry, [_verdict("product name mention", "remap_to_clean")]
        )
        assert all(l.label == "Clean" for l in updated)
        assert dict(new_registry.labels) == {"Clean": 7}

    def test_keep_is_noop(self):
        lines = _lines([("Clean", 2), ("spam link", 2)])
        registry = _registry(lines)
        updated, new_registry = apply_verdicts(
            lines, registry, [_verdict("spam link", "keep")]
        )
        assert updated == lines
        assert dict(new_registry.labels) == {"Clean": 2, "spam link": 2}

    def test_duplicate_verdict_idempotent(self):
        lines = _lines([("Clean", 2), ("spam link", 2)])
        registry = _registry(lines)
        verdicts = [
            _verdict("spam link", "remap_to_clean"),
            _verdict("spam link", "remap_to_clean"),
        ]
        once, _ = apply_verdicts(lines, registry, verdicts[:1])
        twice, _ = apply_verdicts(lines, registry, verdicts)
        assert once == twice

    def test_unknown_label_rejected(self):
        lines = _lines([("Clean", 2)])
        with pytest.raises(UnknownLabelError):
            apply_verdicts(lines, _registry(lines), [_verdict("ghost", "keep")])

    def test_later_timestamp_supersedes(self):
        verdicts = [
            _verdict("x", "remap_to_clean", timestamp="2026-01-01T00:00:00Z"),
            _verdict("x", "keep", timestamp="2026-01-02T00:00:00Z"),
        ]
        final = resolve_verdicts(verdicts)
        assert final["x"].decision == "keep"

    def test_timestamp_tie_broken_by_reviewer(self):
        verdicts = [
            _verdict("x", "remap_to_clean", reviewer="a1"),
            _verdict("x", "keep", reviewer="a2"),
        ]
        assert resolve_verdicts(verdicts)["x"].decision == "keep"
        assert resolve_verdicts(list(reversed(verdicts)))["x"].decision == "keep"

    def test_invalid_decision_rejected(self):
        with pytest.raises(ValueError):
            _verdict("x", "maybe")


def _scheme_dict(extra=None):
    grouped = {category: [] for category in CATEGORIES}
    grouped["Clean"] = ["Clean"]
    grouped["Legal & Administrative Content"] = ["copyright notice"]
    grouped["Navigation & Interface Elements"] = ["navigation menu"]
    if extra:
        for category, labels in extra.items():
            grouped[category] = grouped[category] + labels
    return grouped


class TestCategoryScheme:
    def test_valid_scheme_loads_nine_categories(self, tmp_path):
        path = tmp_path / "scheme.json"
        path.write_text(json.dumps(_scheme_dict()))
        scheme = load_category_scheme(path)
        assert scheme.categories == CATEGORIES
        assert scheme.category_for("copyright notice") == "Legal & Administrative Content"

    def test_unassigned_label_reported(self, tmp_path):
        path = tmp_path / "scheme.json"
        path.write_text(json.dumps(_scheme_dict()))
        with pytest.raises(UnassignedLabelError) as excinfo:
            load_category_scheme(path, known_labels=["Clean", "captcha text"])
        assert excinfo.value.labels == ["captcha text"]

    def test_duplicate_assignment_reported(self):
        grouped = _scheme_dict(
            extra={"Promotional & Spam Content": ["legal disclaimer"],
                   "Legal & Administrative Content": ["legal disclaimer"]}
        )
        with pytest.raises(DuplicateAssignmentError) as excinfo:
            build_category_scheme(grouped)
        assert excinfo.value.labels == ["legal disclaimer"]

    def test_missing_category_rejected(self):
        grouped = _scheme_dict()
        del grouped["Offensive or Inappropriate Content"]
        with pytest.raises(SchemeError, match="missing categories"):
            build_category_scheme(grouped)

    def test_clean_must_map_to_clean(self):
        grouped = _scheme_dict(extra={"Promotional & Spam Content": ["Clean"]})
        grouped["Clean"] = []
        with pytest.raises(SchemeError, match="Clean"):
            build_category_scheme(grouped)


class TestCategorizeCorpus:
    def test_copyright_notice_goes_to_legal(self):
        lines = _lines([("Clean", 2), ("copyright notice", 1)])
        scheme = build_category_scheme(_scheme_dict())
        categorized, tally = categorize_corpus(lines, scheme)
        legal = [c for c in categorized if c.label == "copyright notice"]
        assert legal[0].category == "Legal & Administrative Content"
        assert tally["Legal & Administrative Content"] == 1
        assert sum(tally.values()) == len(lines)

    def test_all_clean_corpus(self):
        lines = _lines([("Clean", 5)])
        scheme = build_category_scheme(_scheme_dict())
        _, tally = categorize_corpus(lines, scheme)
        assert tally["Clean"] == 5
        assert all(count == 0 for cat, count in tally.items() if cat != "Clean")

    def test_unmapped_label_raises(self):
        lines = _lines([("mystery", 1)])
        scheme = build_category_scheme(_scheme_dict())
        with pytest.raises(UnknownLabelError):
            categorize_corpus(lines, scheme)


def test_verdict_file_roundtrip(tmp_path):
    verdicts = [
        VerificationVerdict(
            "spam link", "remap_to_clean", (("d", 1, 0), ("d", 4, 1)),
            "a1", "2026-02-03T10:00:00Z",
        ),
        VerificationVerdict("navigation menu", "keep", (), "a2", "2026-02-03T11:00:00Z"),
    ]
    path = tmp_path / "verdicts.jsonl"
    write_verdicts(verdicts, path)
    assert read_verdicts(path) == verdicts
