"""Command-line entry points for the line-quality pipeline."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import agreement as agreement_mod
from . import calibration, classifier, filtering, labeling, service, taxonomy
from .corpus import (
    corpus_stats,
    load_documents,
    read_labeled_corpus,
    write_labeled_corpus,
)

logger = logging.getLogger(__name__)


def cmd_ingest(args: argparse.Namespace) -> int:
    stats = corpus_stats(args.input)
    if args.stats:
        print(json.dumps(stats, indent=2))
    else:
        print(f"{stats['documents']} documents, {stats['lines']} lines")
    return 0


def cmd_label(args: argparse.Namespace) -> int:
    config = (
        labeling.LabelerConfig.from_file(args.config)
        if args.config
        else labeling.LabelerConfig()
    )
    client = None
    if args.transcript:
        client = labeling.TranscriptClient.from_file(args.transcript)
    registry = labeling.label_corpus(
        load_documents(args.input),
        config,
        args.out,
        client=client,
        resume=not args.no_resume,
    )
    print(f"labeled {registry.total()} lines across {len(registry)} labels")
    return 0


def cmd_refine(args: argparse.Namespace) -> int:
    lines = read_labeled_corpus(args.labels)
    registry = labeling.LabelRegistry()
    for line in lines:
        registry.add(line.label)

    lines, registry = taxonomy.remap_infrequent(lines, registry, args.min_count)
    if args.verdicts:
        verdicts = taxonomy.read_verdicts(args.verdicts)
        lines, registry = taxonomy.apply_verdicts(lines, registry, verdicts)

    if args.scheme:
        scheme = taxonomy.load_category_scheme(args.scheme, known_labels=registry.names())
        categorized, tally = taxonomy.categorize_corpus(lines, scheme)
        taxonomy.write_categorized_corpus(categorized, args.out)
        total = sum(tally.values())
        for category in scheme.categories:
            count = tally[category]
            print(f"{category}: {count} ({100.0 * count / total:.2f}%)")
    else:
        write_labeled_corpus(lines, args.out)
        print(f"{len(registry)} labels after refinement")
    return 0


def _load_categorized(path: str) -> list:
    return taxonomy.read_categorized_corpus(path)


def cmd_train(args: argparse.Namespace) -> int:
    lines = _load_categorized(args.data)
    split = classifier.stratified_split(lines, seed=args.seed)
    cfg = classifier.TrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        eval_interval=args.eval_interval,
    )
    model = classifier.train_baseline(split, cfg, feature_dim=args.feature_dim)
    classifier.save_model(model, args.out)
    with open(Path(args.out) / "train_meta.json", "w", encoding="utf-8") as handle:
        json.dump({"split_seed": args.seed, "data": str(args.data)}, handle)
    best = min(loss for _, loss in model.history)
    print(
        f"trained on {len(split.train)} lines, best dev loss {best:.4f},"
        f" early stop: {model.stopped_early}"
    )
    return 0


def _split_seed(model_dir: str, override: int | None) -> int:
    if override is not None:
        return override
    meta_path = Path(model_dir) / "train_meta.json"
    if meta_path.exists():
        with open(meta_path, "r", encoding="utf-8") as handle:
            return int(json.load(handle)["split_seed"])
    return 42


def cmd_eval(args: argparse.Namespace) -> int:
    model = classifier.load_model(args.model)
    lines = _load_categorized(args.data)
    split = classifier.stratified_split(lines, seed=_split_seed(args.model, args.seed))
    report = classifier.evaluate(model, split.test)
    with open(args.report, "w", encoding="utf-8") as handle:
        json.dump(report.to_dict(), handle, indent=2)
    print(f"micro F1 {report.micro_f1:.4f}, macro F1 {report.macro_f1:.4f}")
    clean = report.per_class.get("Clean")
    if clean:
        print(
            f"Clean: P {clean['precision']:.4f} R {clean['recall']:.4f}"
            f" F1 {clean['f1']:.4f}"
        )
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    model = classifier.load_model(args.model)
    lines = _load_categorized(args.data)
    split = classifier.stratified_split(lines, seed=_split_seed(args.model, args.seed))
    # default: fit on the held-out test split; --split dev uses the dev split
    # as a dedicated calibration set instead
    fit_lines = split.test if args.split == "test" else split.dev
    probs = classifier.predict_proba_matrix(model, [l.text for l in fit_lines])
    scores = probs[:, 0]
    labels = [l.category == "Clean" for l in fit_lines]
    params = calibration.fit_platt(scores, labels)
    calibration.save_platt(
        params,
        args.out,
        fitted_on=calibration.dataset_hash(scores, labels),
        n=len(scores),
    )
    print(
        f"fitted a={params.a:.4f} b={params.b:.4f} on {len(scores)}"
        f" {args.split} lines"
    )
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    platt = calibration.load_platt(args.platt)
    if args.external_scores:
        corpus_lines = []
        for doc in load_documents(args.input):
            from .corpus import document_to_records

            corpus_lines.extend(document_to_records(doc))
        distributions = classifier.import_external_scores(
            args.external_scores, corpus_lines
        )
        scorer = filtering.ExternalScorer(distributions)
    else:
        scorer = filtering.BaselineScorer(classifier.load_model(args.model))
    plan = filtering.ShardPlan(
        shard_size=args.shard_size, batch_size=args.batch, workers=args.workers
    )
    manifest = filtering.score_corpus(
        load_documents(args.input), scorer, platt, plan, args.out
    )
    ok = sum(1 for s in manifest["shards"] if s["status"] == "ok")
    failed = [s["name"] for s in manifest["shards"] if s["status"] == "failed"]
    print(f"scored {ok}/{len(manifest['shards'])} shards into {args.out}")
    if failed:
        print(f"failed shards: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_filter(args: argparse.Namespace) -> int:
    stats = filtering.filter_corpus(args.scored, args.threshold, args.out)
    original = filtering.CorpusCounts(
        docs=stats.docs_total, lines=stats.lines_total, words=stats.words_total
    )
    filtered = filtering.CorpusCounts(
        docs=stats.docs_total - stats.docs_dropped,
        lines=stats.lines_total - stats.lines_removed,
        words=stats.words_total - stats.words_removed,
    )
    text, reduction = filtering.reduction_report(original, filtered)
    if args.report:
        payload = stats.to_dict()
        payload["reduction"] = reduction
        with open(args.report, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2)
    print(text)
    return 0


def cmd_iaa(args: argparse.Namespace) -> int:
    session = agreement_mod.AnnotationSession.load(args.session)
    report = agreement_mod.agreement_report(session)
    with open(args.report, "w", encoding="utf-8") as handle:
        json.dump(report.to_dict(), handle, indent=2)
    print(report.to_text())
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    service.serve(args.data, args.state, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="linequal", description="line-level corpus quality pipeline"
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="stream a corpus and report counts")
    p.add_argument("--input", required=True)
    p.add_argument("--stats", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("label", help="label lines through the chat endpoint")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON labeler config")
    p.add_argument("--transcript", help="mock transcript file instead of live endpoint")
    p.add_argument("--no-resume", action="store_true")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("refine", help="refine labels and apply the category scheme")
    p.add_argument("--labels", required=True)
    p.add_argument("--min-count", type=int, default=2)
    p.add_argument("--verdicts")
    p.add_argument("--scheme")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("train", help="train the baseline line classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.add_argument("--learning-rate", type=float, default=1e-5)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--max-epochs", type=int, default=5)
    p.add_argument("--eval-interval", type=int, default=100)
    p.add_argument("--feature-dim", type=int, default=classifier.DEFAULT_FEATURE_DIM)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on the held-out test split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate", help="fit the calibration map on held-out data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--split", choices=("test", "dev"), default="test")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("score", help="score a corpus into quality_score shards")
    p.add_argument("--input", required=True)
    p.add_argument("--model")
    p.add_argument("--external-scores")
    p.add_argument("--platt", required=True)
    p.add_argument("--shard-size", type=int, default=100_000)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("filter", help="threshold-filter a scored corpus")
    p.add_argument("--scored", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("iaa", help="agreement report for an annotation session")
    p.add_argument("--session", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_iaa)

    p = sub.add_parser("serve", help="run the review service")
    p.add_argument("--data", required=True)
    p.add_argument("--state", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    if args.command == "score" and not (args.model or args.external_scores):
        print("score: either --model or --external-scores is required", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
