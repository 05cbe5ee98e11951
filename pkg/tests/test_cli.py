from __future__ import annotations

import json

import pytest

from linequal.cli import main
from linequal.taxonomy import CATEGORIES, write_categorized_corpus
from synthetic import marker_dataset, random_documents


def _write_corpus(path, docs):
    with open(path, "w", encoding="utf-8") as handle:
        for doc in docs:
            handle.write(json.dumps({"id": doc.id, "text": doc.text}) + "\n")


def _scheme_path(tmp_path, labels_by_category=None):
    grouped = {category: [] for category in CATEGORIES}
    grouped["Clean"] = ["Clean"]
    for category, labels in (labels_by_category or {}).items():
        grouped[category].extend(labels)
    path = tmp_path / "scheme.json"
    path.write_text(json.dumps(grouped))
    return path


def test_ingest_stats(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    _write_corpus(corpus, random_documents(5, seed=1))
    assert main(["ingest", "--input", str(corpus), "--stats"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["documents"] == 5


def test_label_refine_flow(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    docs = random_documents(3, seed=2, max_lines=3)
    _write_corpus(corpus, docs)
    n_batches = 3  # each doc fits one batch (<= 15 lines)
    lines_per_doc = [len(d.text.split("\n")) for d in docs]
    transcript = tmp_path / "transcript.jsonl"
    with open(transcript, "w") as handle:
        for count in lines_per_doc:
            labels = ["Clean"] * count
            labels[0] = "navigation menu"
            handle.write(json.dumps({"response": json.dumps(labels)}) + "\n")

    labels_out = tmp_path / "labels.jsonl"
    assert main([
        "label", "--input", str(corpus), "--out", str(labels_out),
        "--transcript", str(transcript),
    ]) == 0
    assert labels_out.exists()

    scheme = _scheme_path(
        tmp_path,
        {"Navigation & Interface Elements": ["navigation menu"]},
    )
    categorized = tmp_path / "categorized.jsonl"
    assert main([
        "refine", "--labels", str(labels_out), "--min-count", "1",
        "--scheme", str(scheme), "--out", str(categorized),
    ]) == 0
    out = capsys.readouterr().out
    assert "Navigation & Interface Elements: 3" in out
    rows = [json.loads(r) for r in categorized.read_text().splitlines()]
    assert sum(1 for r in rows if r["category"] != "Clean") == n_batches


def test_train_eval_calibrate_score_filter_flow(tmp_path, capsys):
    categorized = tmp_path / "categorized.jsonl"
    write_categorized_corpus(marker_dataset(900, seed=4), categorized)

    model_dir = tmp_path / "model"
    assert main([
        "train", "--data", str(categorized), "--seed", "42",
        "--out", str(model_dir), "--learning-rate", "20.0",
        "--eval-interval", "20", "--feature-dim", str(2**14),
    ]) == 0
    assert (model_dir / "config.json").exists()

    report_path = tmp_path / "report.json"
    assert main([
        "eval", "--model", str(model_dir), "--data", str(categorized),
        "--report", str(report_path),
    ]) == 0
    report = json.loads(report_path.read_text())
    assert report["micro_f1"] >= 0.95

    platt_path = tmp_path / "platt.json"
    assert main([
        "calibrate", "--model", str(model_dir), "--data", str(categorized),
        "--out", str(platt_path),
    ]) == 0
    platt = json.loads(platt_path.read_text())
    assert platt["n"] == 180

    dev_platt_path = tmp_path / "platt-dev.json"
    assert main([
        "calibrate", "--model", str(model_dir), "--data", str(categorized),
        "--out", str(dev_platt_path), "--split", "dev",
    ]) == 0
    assert json.loads(dev_platt_path.read_text())["n"] == 90

    corpus = tmp_path / "corpus.jsonl"
    docs = random_documents(12, seed=9)
    _write_corpus(corpus, docs)
    scored_dir = tmp_path / "scored"
    assert main([
        "score", "--input", str(corpus), "--model", str(model_dir),
        "--platt", str(platt_path), "--shard-size", "5", "--batch", "8",
        "--out", str(scored_dir),
    ]) == 0
    manifest = json.loads((scored_dir / "manifest.json").read_text())
    assert [s["docs"] for s in manifest["shards"]] == [5, 5, 2]

    filtered = tmp_path / "filtered.jsonl"
    stats_path = tmp_path / "stats.json"
    assert main([
        "filter", "--scored", str(scored_dir), "--threshold", "0.5",
        "--out", str(filtered), "--report", str(stats_path),
    ]) == 0
    stats = json.loads(stats_path.read_text())
    assert stats["threshold"] == 0.5
    assert sum(stats["histogram"]) == stats["lines_total"]
    assert "reduction" in stats


def test_iaa_cli(tmp_path, capsys):
    from linequal.agreement import create_session, record_verdict
    from linequal.corpus import Document
    from linequal.taxonomy import CategorizedLine

    docs = [Document("d1", "a\nb\nc")]
    lines = [
        CategorizedLine("d1", i, 0, t, "Clean", "Clean")
        for i, t in enumerate("abc")
    ]
    session = create_session(docs, lines)
    for i in range(3):
        record_verdict(session, "a1", i, agrees=True)
    session_path = tmp_path / "session.json"
    session.save(session_path)

    report_path = tmp_path / "iaa.json"
    assert main([
        "iaa", "--session", str(session_path), "--report", str(report_path),
    ]) == 0
    report = json.loads(report_path.read_text())
    assert report["per_annotator"]["a1"]["full"] == 1.0
    assert "All labels" in capsys.readouterr().out


def test_score_requires_a_scorer(tmp_path, capsys):
    assert main([
        "score", "--input", "x", "--platt", "y", "--out", "z",
    ]) == 2
    assert "either --model or --external-scores" in capsys.readouterr().err
