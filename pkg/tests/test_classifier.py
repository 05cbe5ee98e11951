from __future__ import annotations

import json
import math
import random
from collections import Counter

import numpy as np
import pytest

from linequal.classifier import (
    BaselineModel,
    ClassDistribution,
    ScoreImportError,
    TrainConfig,
    classification_report,
    evaluate,
    featurize,
    hash_gram,
    import_external_scores,
    load_model,
    loss_and_grad,
    predict_distribution,
    predict_proba_matrix,
    save_model,
    smoothed_targets,
    stratified_split,
    train_baseline,
)
from linequal.taxonomy import CATEGORIES, CategorizedLine
from synthetic import marker_dataset


def _lines_by_class(counts_by_class):
    lines = []
    for category, count in counts_by_class.items():
        for i in range(count):
            lines.append(
                CategorizedLine(f"d{category[:3]}", i, 0, f"{category} {i}", category, category)
            )
    return lines


class TestStratifiedSplit:
    def test_exact_proportions(self):
        lines = _lines_by_class(
            {"Clean": 80, "Navigation & Interface Elements": 20}
        )
        split = stratified_split(lines, seed=3)
        counts = {
            part: Counter(l.category for l in getattr(split, part))
            for part in ("train", "dev", "test")
        }
        assert counts["train"]["Clean"] == 56
        assert counts["train"]["Navigation & Interface Elements"] == 14
        assert counts["dev"]["Clean"] == 8
        assert counts["dev"]["Navigation & Interface Elements"] == 2
        assert counts["test"]["Clean"] == 16
        assert counts["test"]["Navigation & Interface Elements"] == 4

    def test_deterministic_under_seed(self):
        lines = _lines_by_class({"Clean": 50, "Promotional & Spam Content": 23})
        a = stratified_split(lines, seed=9)
        b = stratified_split(lines, seed=9)
        assert a.train == b.train and a.dev == b.dev and a.test == b.test
        c = stratified_split(lines, seed=10)
        assert c.train != a.train

    def test_tiny_class_goes_to_train_with_warning(self):
        lines = _lines_by_class({"Clean": 30, "Offensive or Inappropriate Content": 1})
        with pytest.warns(UserWarning, match="placing all in train"):
            split = stratified_split(lines, seed=0)
        assert sum(
            1 for l in split.train if l.category == "Offensive or Inappropriate Content"
        ) == 1

    def test_splits_disjoint_and_exhaustive(self):
        lines = _lines_by_class({"Clean": 41, "Legal & Administrative Content": 17})
        split = stratified_split(lines, seed=1)
        keys = [l.key for part in (split.train, split.dev, split.test) for l in part]
        assert len(keys) == len(lines)
        assert len(set(keys)) == len(lines)


class TestFeaturize:
    def test_empty_text_zero_vector(self):
        assert featurize("") == {}

    def test_deterministic(self):
        assert featurize("hello world") == featurize("hello world")

    def test_ab_matches_enumeration_oracle(self):
        # oracle: enumerate n-grams explicitly, then hash
        dim = 2**18
        grams = ["a", "b", "ab"]
        expected_counts: Counter = Counter(hash_gram(g, dim) for g in grams)
        norm = math.sqrt(sum(v * v for v in expected_counts.values()))
        expected = {idx: v / norm for idx, v in expected_counts.items()}
        assert featurize("ab", ngram_range=(1, 2), dim=dim) == pytest.approx(expected)

    def test_l2_norm_is_one(self):
        vec = featurize("some text with characters")
        assert sum(v * v for v in vec.values()) == pytest.approx(1.0)


class TestLossAndGradient:
    def test_label_smoothing_targets(self):
        targets = smoothed_targets(np.array([0]), 9, 0.1)[0]
        assert targets[0] == pytest.approx(0.9 + 0.1 / 9)
        assert targets[1] == pytest.approx(0.1 / 9)
        assert targets.sum() == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        n, d, k = 6, 12, 9
        x = rng.normal(size=(n, d))
        y = rng.integers(0, k, size=n)
        w = rng.normal(size=(d, k)) * 0.5
        b = rng.normal(size=k) * 0.1
        _, grad_w, grad_b = loss_and_grad(w, b, x, y, 0.1)

        def loss_at(w_mod, b_mod):
            return loss_and_grad(w_mod, b_mod, x, y, 0.1)[0]

        h = 1e-6
        for _ in range(20):
            i, j = rng.integers(0, d), rng.integers(0, k)
            w_plus, w_minus = w.copy(), w.copy()
            w_plus[i, j] += h
            w_minus[i, j] -= h
            numeric = (loss_at(w_plus, b) - loss_at(w_minus, b)) / (2 * h)
            denom = max(abs(numeric), abs(grad_w[i, j]), 1e-8)
            assert abs(numeric - grad_w[i, j]) / denom < 1e-4
        for j in range(k):
            b_plus, b_minus = b.copy(), b.copy()
            b_plus[j] += h
            b_minus[j] -= h
            numeric = (loss_at(w, b_plus) - loss_at(w, b_minus)) / (2 * h)
            denom = max(abs(numeric), abs(grad_b[j]), 1e-8)
            assert abs(numeric - grad_b[j]) / denom < 1e-4


class TestTrainBaseline:
    def test_learns_separable_marker_data(self):
        lines = marker_dataset(900, seed=5)
        split = stratified_split(lines, seed=5)
        cfg = TrainConfig(learning_rate=20.0, batch_size=16, max_epochs=5,
                          eval_interval=20)
        model = train_baseline(split, cfg, feature_dim=2**14)
        probs = predict_proba_matrix(model, [l.text for l in split.dev])
        predictions = [model.classes[i] for i in probs.argmax(axis=1)]
        accuracy = np.mean([p == l.category for p, l in zip(predictions, split.dev)])
        assert accuracy >= 0.95

    def test_plateau_triggers_early_stop(self):
        lines = marker_dataset(400, seed=2)
        split = stratified_split(lines, seed=2)
        # zero learning rate: dev loss can never improve after the first eval
        cfg = TrainConfig(learning_rate=0.0, batch_size=16, max_epochs=5,
                          patience=5, eval_interval=2)
        model = train_baseline(split, cfg, feature_dim=2**12)
        assert model.stopped_early
        assert len(model.history) == 6  # first eval + 5 non-improving
        losses = [loss for _, loss in model.history]
        assert all(loss == pytest.approx(losses[0]) for loss in losses)

    def test_returns_best_dev_checkpoint(self):
        lines = marker_dataset(400, seed=7)
        split = stratified_split(lines, seed=7)
        cfg = TrainConfig(learning_rate=1.0, batch_size=16, max_epochs=3,
                          eval_interval=5)
        model = train_baseline(split, cfg, feature_dim=2**12)
        best_recorded = min(loss for _, loss in model.history)
        from linequal.classifier import featurize_matrix, _dev_loss  # noqa: PLC2701

        x_dev = featurize_matrix([l.text for l in split.dev], model.ngram_range,
                                 model.feature_dim)
        y_dev = np.array([CATEGORIES.index(l.category) for l in split.dev])
        final = _dev_loss(model.weights, model.bias, x_dev, y_dev, cfg.label_smoothing)
        assert final == pytest.approx(best_recorded)


class TestPredictDistribution:
    def test_probs_sum_to_one(self):
        model = BaselineModel(
            feature_dim=2**10,
            weights=np.random.default_rng(0).normal(size=(2**10, 9)),
            bias=np.zeros(9),
        )
        dist = predict_distribution(model, "any line of text")
        assert dist.probs.sum() == pytest.approx(1.0, abs=1e-6)

    def test_zero_weight_model_is_uniform(self):
        model = BaselineModel(
            feature_dim=2**10, weights=np.zeros((2**10, 9)), bias=np.zeros(9)
        )
        dist = predict_distribution(model, "whatever")
        assert np.allclose(dist.probs, 1 / 9)

    def test_marker_lines_classified_confidently(self):
        lines = marker_dataset(900, seed=11)
        split = stratified_split(lines, seed=11)
        cfg = TrainConfig(learning_rate=20.0, batch_size=16, max_epochs=5,
                          eval_interval=20)
        model = train_baseline(split, cfg, feature_dim=2**14)
        hits = [
            model.classes[predict_distribution(model, l.text).probs.argmax()]
            == l.category
            for l in split.test
        ]
        assert np.mean(hits) >= 0.9


def _report_oracle(y_true, y_pred, classes):
    """Brute-force recomputation from raw pairs."""
    per_class = {}
    f1s = []
    for c in classes:
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        support = tp + fn
        per_class[c] = (precision, recall, f1, support)
        if support:
            f1s.append(f1)
    micro = sum(1 for t, p in zip(y_true, y_pred) if t == p) / len(y_true)
    macro = sum(f1s) / len(f1s) if f1s else 0.0
    return per_class, micro, macro


class TestClassificationReport:
    def test_three_class_toy_micro_f1(self):
        classes = ("a", "b", "c")
        y_true = ["a"] * 5 + ["b"] * 3 + ["c"] * 2 + ["a", "b"]
        y_pred = ["a"] * 5 + ["b"] * 3 + ["c"] * 2 + ["b", "c"]
        report = classification_report(y_true, y_pred, classes)
        assert report.micro_f1 == pytest.approx(10 / 12)
        assert report.confusion.sum() == 12
        assert np.trace(report.confusion) == 10

    def test_perfect_predictions(self):
        y = ["a", "b", "c", "a"]
        report = classification_report(y, y, ("a", "b", "c"))
        assert report.micro_f1 == 1.0
        assert report.macro_f1 == 1.0
        assert np.all(report.confusion == np.diag([2, 1, 1]))

    def test_matches_bruteforce_on_random_sets(self):
        rng = random.Random(0)
        classes = tuple("abcdefghi")
        for _ in range(50):
            n = rng.randint(1, 40)
            k = rng.randint(1, 9)
            y_true = [classes[rng.randrange(k)] for _ in range(n)]
            y_pred = [classes[rng.randrange(k)] for _ in range(n)]
            report = classification_report(y_true, y_pred, classes)
            per_class, micro, macro = _report_oracle(y_true, y_pred, classes)
            assert report.micro_f1 == pytest.approx(micro, abs=1e-12)
            assert report.macro_f1 == pytest.approx(macro, abs=1e-12)
            for c in classes:
                got = report.per_class[c]
                assert got["precision"] == pytest.approx(per_class[c][0], abs=1e-12)
                assert got["recall"] == pytest.approx(per_class[c][1], abs=1e-12)
                assert got["f1"] == pytest.approx(per_class[c][2], abs=1e-12)
            accuracy = sum(t == p for t, p in zip(y_true, y_pred)) / n
            assert report.micro_f1 == pytest.approx(accuracy, abs=1e-12)

    def test_row_sums_are_supports(self):
        y_true = ["a", "a", "b", "c"]
        y_pred = ["b", "a", "b", "a"]
        report = classification_report(y_true, y_pred, ("a", "b", "c"))
        assert report.confusion.sum(axis=1).tolist() == [2, 1, 1]

    def test_report_dict_contains_row_percentages(self):
        report = classification_report(["a", "a"], ["a", "b"], ("a", "b"))
        payload = report.to_dict()
        assert payload["confusion_row_pct"][0] == [50.0, 50.0]

    def test_error_share_into_primary_class(self):
        # 3 misclassified non-primary lines, 2 of them predicted as class "a"
        y_true = ["a", "b", "b", "b", "c", "c"]
        y_pred = ["a", "a", "a", "b", "b", "c"]
        report = classification_report(y_true, y_pred, ("a", "b", "c"))
        assert report.error_share_into_primary() == pytest.approx(2 / 3)
        payload = report.to_dict()
        assert payload["primary_class"] == "a"
        assert payload["error_share_into_primary"] == pytest.approx(2 / 3)

    def test_error_share_none_without_errors(self):
        report = classification_report(["a", "b"], ["a", "b"], ("a", "b"))
        assert report.error_share_into_primary() is None


class TestEvaluate:
    def test_evaluate_on_trained_model(self):
        lines = marker_dataset(450, seed=3)
        split = stratified_split(lines, seed=3)
        cfg = TrainConfig(learning_rate=20.0, batch_size=16, max_epochs=8,
                          eval_interval=10)
        model = train_baseline(split, cfg, feature_dim=2**13)
        report = evaluate(model, split.test)
        assert report.confusion.shape == (9, 9)
        assert report.confusion.sum() == len(split.test)
        assert report.micro_f1 >= 0.9

    def test_empty_test_rejected(self):
        model = BaselineModel(
            feature_dim=4, weights=np.zeros((4, 9)), bias=np.zeros(9)
        )
        with pytest.raises(ValueError):
            evaluate(model, [])


class TestImportExternalScores:
    def _corpus(self):
        return [
            CategorizedLine("d1", 0, 0, "a", "Clean", "Clean"),
            CategorizedLine("d1", 1, 0, "b", "Clean", "Clean"),
            CategorizedLine("d2", 0, 0, "c", "Clean", "Clean"),
        ]

    def _write(self, path, rows):
        with open(path, "w") as handle:
            for row in rows:
                handle.write(json.dumps(row) + "\n")

    def _row(self, doc_id, line_index, probs):
        return {
            "doc_id": doc_id,
            "line_index": line_index,
            "segment_index": 0,
            "probs": probs,
        }

    def test_complete_file(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        probs = [0.92] + [0.01] * 8
        self._write(
            path,
            [self._row("d1", 0, probs), self._row("d1", 1, probs), self._row("d2", 0, probs)],
        )
        distributions = import_external_scores(path, self._corpus())
        assert len(distributions) == 3
        assert distributions[0].key == ("d1", 0, 0)

    def test_missing_line_reported(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        probs = [0.92] + [0.01] * 8
        self._write(path, [self._row("d1", 0, probs), self._row("d1", 1, probs)])
        with pytest.raises(ScoreImportError, match=r"\('d2', 0, 0\)"):
            import_external_scores(path, self._corpus())

    def test_slightly_off_sum_renormalized(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        probs = [0.9204] + [0.01] * 8  # sums to 1.0004
        self._write(
            path,
            [self._row("d1", 0, probs), self._row("d1", 1, probs), self._row("d2", 0, probs)],
        )
        distributions = import_external_scores(path, self._corpus())
        assert distributions[0].probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_badly_off_sum_rejected(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        probs = [0.93] + [0.01] * 8  # sums to 1.01
        self._write(path, [self._row("d1", 0, probs)])
        with pytest.raises(ScoreImportError, match="outside"):
            import_external_scores(path, self._corpus())


def test_model_roundtrip(tmp_path):
    lines = marker_dataset(200, seed=1)
    split = stratified_split(lines, seed=1)
    cfg = TrainConfig(learning_rate=1.0, batch_size=16, max_epochs=1, eval_interval=5)
    model = train_baseline(split, cfg, feature_dim=2**12)
    save_model(model, tmp_path / "model")
    loaded = load_model(tmp_path / "model")
    assert loaded.classes == model.classes
    assert loaded.ngram_range == model.ngram_range
    assert np.array_equal(loaded.weights, model.weights)
    assert np.array_equal(loaded.bias, model.bias)
    text = "some qq3zz line"
    assert predict_distribution(loaded, text).probs == pytest.approx(
        predict_distribution(model, text).probs
    )


def test_class_distribution_validation():
    with pytest.raises(ValueError):
        ClassDistribution(probs=np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        ClassDistribution(probs=np.array([-0.1, 1.1]))
    ClassDistribution(probs=np.full(9, 1 / 9))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(label_smoothing=1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
