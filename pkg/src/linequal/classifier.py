"""Nine-class line-quality classifier: stratified splits, a hashed character
n-gram multinomial logistic baseline, evaluation metrics, and an import
contract for probabilities produced by external scorers.

The baseline is trained with mini-batch gradient descent on label-smoothed
cross-entropy with dev-loss early stopping, and returns the best-dev
checkpoint. External transformer classifiers plug in through
:func:`import_external_scores` instead of being trained here.
"""

from __future__ import annotations

import json
import logging
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import sparse

from .corpus import LineKey
from .taxonomy import CATEGORIES, CategorizedLine

logger = logging.getLogger(__name__)

DEFAULT_FEATURE_DIM = 2**18
DEFAULT_NGRAM_RANGE = (1, 4)
MODEL_FORMAT_VERSION = 1
PROB_SUM_TOLERANCE = 1e-3


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


class ScoreImportError(ValueError):
    """External score file violates the import contract."""


@dataclass(frozen=True)
class ClassDistribution:
    """Per-line probabilities over the nine categories (canonical order,
    Clean first); they sum to 1 within 1e-6."""

    probs: np.ndarray
    key: LineKey | None = None

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1:
            raise ValueError("probs must be a vector")
        if np.any(probs < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(float(probs.sum()) - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {probs.sum()}, expected 1")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 16
    max_epochs: int = 5
    patience: int = 5
    label_smoothing: float = 0.1
    eval_interval: int = 100

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs, and patience must be positive")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0 <= self.label_smoothing < 1:
            raise ValueError("label_smoothing must be in [0, 1)")


@dataclass
class DatasetSplit:
    train: list[CategorizedLine]
    dev: list[CategorizedLine]
    test: list[CategorizedLine]
    seed: int
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)


@dataclass
class BaselineModel:
    feature_dim: int
    weights: np.ndarray  # (feature_dim, n_classes)
    bias: np.ndarray  # (n_classes,)
    classes: tuple[str, ...] = CATEGORIES
    ngram_range: tuple[int, int] = DEFAULT_NGRAM_RANGE
    history: list[tuple[int, float]] = field(default_factory=list, repr=False)
    stopped_early: bool = False

    def __post_init__(self) -> None:
        if len(self.classes) != len(CATEGORIES):
            raise ValueError(f"expected {len(CATEGORIES)} classes")
        if not np.all(np.isfinite(self.weights)) or not np.all(np.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")


@dataclass
class EvalReport:
    classes: tuple[str, ...]
    confusion: np.ndarray  # (k, k), rows = true, columns = predicted
    per_class: dict[str, dict[str, float]]  # precision/recall/f1/support
    micro_f1: float
    macro_f1: float

    def to_dict(self) -> dict[str, Any]:
        row_sums = self.confusion.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            row_pct = np.where(row_sums > 0, self.confusion / row_sums * 100.0, 0.0)
        return {
            "classes": list(self.classes),
            "confusion": self.confusion.tolist(),
            "confusion_row_pct": np.round(row_pct, 2).tolist(),
            "per_class": self.per_class,
            "micro_f1": self.micro_f1,
            # classes with zero support are excluded from the macro average
            "macro_f1": self.macro_f1,
            # monitored, not asserted: mistaking low-quality lines for the
            # first (Clean) class is the safe error direction
            "primary_class": self.classes[0],
            "error_share_into_primary": self.error_share_into_primary(),
        }

    def error_share_into_primary(self) -> float | None:
        """Of the misclassified lines whose true class is not the first
        class, the share predicted as the first class; None without errors."""
        rest = self.confusion[1:]
        errors = int(rest.sum() - np.trace(self.confusion[1:, 1:]))
        if errors == 0:
            return None
        return float(rest[:, 0].sum()) / errors


def stratified_split(
    lines: Sequence[CategorizedLine],
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> DatasetSplit:
    """Shuffle and partition lines into train/dev/test preserving per-class
    proportions within one line of the stratified ideal.

    A class with fewer lines than splits goes wholly to train with a warning.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    if not lines:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[CategorizedLine]] = {}
    for line in lines:
        by_class.setdefault(line.category, []).append(line)

    parts: tuple[list[CategorizedLine], ...] = ([], [], [])
    for category in sorted(by_class):
        group = by_class[category]
        order = rng.permutation(len(group))
        shuffled = [group[i] for i in order]
        n = len(group)
        if n < len(ratios):
            warnings.warn(
                f"class {category!r} has only {n} line(s); placing all in train",
                stacklevel=2,
            )
            parts[0].extend(shuffled)
            continue
        counts = _largest_remainder(n, ratios)
        start = 0
        for part, count in zip(parts, counts):
            part.extend(shuffled[start : start + count])
            start += count

    train, dev, test = parts
    for part in parts:
        order = rng.permutation(len(part))
        part[:] = [part[i] for i in order]
    return DatasetSplit(train=train, dev=dev, test=test, seed=seed, ratios=ratios)


def _largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    ideal = [r * n for r in ratios]
    counts = [int(np.floor(x)) for x in ideal]
    remainders = [x - c for x, c in zip(ideal, counts)]
    leftover = n - sum(counts)
    # ties go to the earlier split (train first) for determinism
    for idx in sorted(range(len(ratios)), key=lambda i: (-remainders[i], i))[:leftover]:
        counts[idx] += 1
    return counts


def hash_gram(gram: str, dim: int) -> int:
    return zlib.crc32(gram.encode("utf-8")) % dim


def featurize(
    text: str,
    ngram_range: tuple[int, int] = DEFAULT_NGRAM_RANGE,
    dim: int = DEFAULT_FEATURE_DIM,
) -> dict[int, float]:
    """L2-normalized hashed character n-gram counts; empty text -> zero vector."""
    lo, hi = ngram_range
    counts: dict[int, float] = {}
    for n in range(lo, hi + 1):
        for i in range(len(text) - n + 1):
            idx = hash_gram(text[i : i + n], dim)
            counts[idx] = counts.get(idx, 0.0) + 1.0
    if not counts:
        return {}
    norm = float(np.sqrt(sum(v * v for v in counts.values())))
    return {idx: value / norm for idx, value in counts.items()}


def featurize_matrix(
    texts: Sequence[str],
    ngram_range: tuple[int, int] = DEFAULT_NGRAM_RANGE,
    dim: int = DEFAULT_FEATURE_DIM,
) -> sparse.csr_matrix:
    data: list[float] = []
    indices: list[int] = []
    indptr = [0]
    for text in texts:
        features = featurize(text, ngram_range, dim)
        indices.extend(features.keys())
        data.extend(features.values())
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (np.array(data), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(len(texts), dim),
    )


def smoothed_targets(y: np.ndarray, n_classes: int, smoothing: float) -> np.ndarray:
    """(1 - eps) one-hot plus eps/K everywhere."""
    targets = np.full((len(y), n_classes), smoothing / n_classes)
    targets[np.arange(len(y)), y] += 1.0 - smoothing
    return targets


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    features: sparse.csr_matrix | np.ndarray,
    y: np.ndarray,
    smoothing: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean label-smoothed cross-entropy and its analytic gradient."""
    logits = features @ weights + bias
    log_probs = _log_softmax(logits)
    targets = smoothed_targets(y, weights.shape[1], smoothing)
    loss = float(-(targets * log_probs).sum() / len(y))
    delta = (np.exp(log_probs) - targets) / len(y)
    grad_w = features.T @ delta
    if sparse.issparse(grad_w):
        grad_w = np.asarray(grad_w.todense())
    grad_b = delta.sum(axis=0)
    return loss, np.asarray(grad_w), grad_b


def _dev_loss(
    weights: np.ndarray,
    bias: np.ndarray,
    features: sparse.csr_matrix,
    y: np.ndarray,
    smoothing: float,
) -> float:
    logits = features @ weights + bias
    log_probs = _log_softmax(logits)
    targets = smoothed_targets(y, weights.shape[1], smoothing)
    return float(-(targets * log_probs).sum() / len(y))


def train_baseline(
    split: DatasetSplit,
    cfg: TrainConfig | None = None,
    feature_dim: int = DEFAULT_FEATURE_DIM,
    ngram_range: tuple[int, int] = DEFAULT_NGRAM_RANGE,
) -> BaselineModel:
    """Mini-batch gradient descent with dev-loss early stopping.

    Stops after ``cfg.patience`` consecutive non-improving dev evaluations
    (or ``cfg.max_epochs``) and returns the best-dev checkpoint.
    """
    cfg = cfg or TrainConfig()
    if not split.train or not split.dev:
        raise ValueError("split must contain train and dev lines")
    classes = CATEGORIES
    class_index = {category: i for i, category in enumerate(classes)}

    x_train = featurize_matrix([l.text for l in split.train], ngram_range, feature_dim)
    y_train = np.array([class_index[l.category] for l in split.train])
    x_dev = featurize_matrix([l.text for l in split.dev], ngram_range, feature_dim)
    y_dev = np.array([class_index[l.category] for l in split.dev])

    rng = np.random.default_rng(split.seed)
    weights = np.zeros((feature_dim, len(classes)))
    bias = np.zeros(len(classes))
    best_weights = weights.copy()
    best_bias = bias.copy()
    best_loss = np.inf
    bad_evals = 0
    history: list[tuple[int, float]] = []
    stopped_early = False
    step = 0

    def evaluate_dev() -> bool:
        """Record a dev evaluation; True when patience is exhausted."""
        nonlocal best_loss, bad_evals, stopped_early
        loss = _dev_loss(weights, bias, x_dev, y_dev, cfg.label_smoothing)
        history.append((step, loss))
        if loss < best_loss:
            best_loss = loss
            best_weights[:] = weights
            best_bias[:] = bias
            bad_evals = 0
            return False
        bad_evals += 1
        if bad_evals >= cfg.patience:
            stopped_early = True
            logger.info(
                "early stop at step %d after %d non-improving evaluations",
                step,
                bad_evals,
            )
            return True
        return False

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(split.train))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            xb = x_train[batch]
            loss, grad_w_sub, grad_b = _batch_grad(
                weights, bias, xb, y_train[batch], cfg.label_smoothing
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {epoch} step {step}"
                )
            cols, grad_w_cols = grad_w_sub
            weights[cols] -= cfg.learning_rate * grad_w_cols
            bias -= cfg.learning_rate * grad_b
            step += 1
            if step % cfg.eval_interval == 0 and evaluate_dev():
                break
        if stopped_early:
            break
    if not stopped_early and (not history or history[-1][0] != step):
        evaluate_dev()

    return BaselineModel(
        feature_dim=feature_dim,
        weights=best_weights,
        bias=best_bias,
        classes=classes,
        ngram_range=ngram_range,
        history=history,
        stopped_early=stopped_early,
    )


def _batch_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    xb: sparse.csr_matrix,
    yb: np.ndarray,
    smoothing: float,
) -> tuple[float, tuple[np.ndarray, np.ndarray], np.ndarray]:
    """Like :func:`loss_and_grad` but returns the weight gradient only on the
    batch's active feature columns (the rest is exactly zero)."""
    cols = np.unique(xb.indices)
    xb_active = xb[:, cols]
    logits = xb_active @ weights[cols] + bias
    log_probs = _log_softmax(logits)
    targets = smoothed_targets(yb, weights.shape[1], smoothing)
    loss = float(-(targets * log_probs).sum() / len(yb))
    delta = (np.exp(log_probs) - targets) / len(yb)
    grad_w_cols = np.asarray(xb_active.T @ delta)
    return loss, (cols, grad_w_cols), delta.sum(axis=0)


def predict_proba_matrix(model: BaselineModel, texts: Sequence[str]) -> np.ndarray:
    features = featurize_matrix(texts, model.ngram_range, model.feature_dim)
    logits = features @ model.weights + model.bias
    return np.exp(_log_softmax(logits))


def predict_distribution(
    model: BaselineModel, text: str, key: LineKey | None = None
) -> ClassDistribution:
    probs = predict_proba_matrix(model, [text])[0]
    return ClassDistribution(probs=probs, key=key)


def classification_report(
    y_true: Sequence[str], y_pred: Sequence[str], classes: Sequence[str]
) -> EvalReport:
    """Confusion matrix and P/R/F1 metrics from label sequences.

    Micro F1 equals accuracy for single-label multiclass; macro F1 averages
    per-class F1 over classes with nonzero support.
    """
    if len(y_true) != len(y_pred):
        raise ValueError("y_true and y_pred length mismatch")
    if not y_true:
        raise ValueError("cannot evaluate an empty test set")
    index = {category: i for i, category in enumerate(classes)}
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for true, pred in zip(y_true, y_pred):
        confusion[index[true], index[pred]] += 1

    per_class: dict[str, dict[str, float]] = {}
    f1_with_support = []
    for i, category in enumerate(classes):
        tp = float(confusion[i, i])
        support = float(confusion[i].sum())
        predicted = float(confusion[:, i].sum())
        precision = tp / predicted if predicted > 0 else 0.0
        recall = tp / support if support > 0 else 0.0
        f1 = (
            2 * precision * recall / (precision + recall)
            if precision + recall > 0
            else 0.0
        )
        per_class[category] = {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "support": int(support),
        }
        if support > 0:
            f1_with_support.append(f1)

    micro_f1 = float(np.trace(confusion)) / len(y_true)
    macro_f1 = float(np.mean(f1_with_support)) if f1_with_support else 0.0
    return EvalReport(
        classes=tuple(classes),
        confusion=confusion,
        per_class=per_class,
        micro_f1=micro_f1,
        macro_f1=macro_f1,
    )


def evaluate(model: BaselineModel, test: Sequence[CategorizedLine]) -> EvalReport:
    """Argmax predictions on the test lines (ties break to the lowest class index)."""
    if not test:
        raise ValueError("test set must be non-empty")
    probs = predict_proba_matrix(model, [l.text for l in test])
    predictions = [model.classes[i] for i in probs.argmax(axis=1)]
    return classification_report([l.category for l in test], predictions, model.classes)


def import_external_scores(
    path: str | Path, corpus_lines: Sequence[CategorizedLine] | Sequence[Any]
) -> list[ClassDistribution]:
    """Read externally produced per-line probability rows keyed by
    (doc_id, line_index, segment_index), one distribution per corpus line.

    Rows whose probabilities sum outside [1 - 1e-3, 1 + 1e-3] are rejected;
    in-tolerance rows are renormalized.
    """
    table: dict[LineKey, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            row = json.loads(raw)
            key = (row["doc_id"], int(row["line_index"]), int(row["segment_index"]))
            probs = np.asarray(row["probs"], dtype=np.float64)
            if probs.shape != (len(CATEGORIES),):
                raise ScoreImportError(
                    f"row {line_number}: expected {len(CATEGORIES)} probabilities,"
                    f" got {probs.shape}"
                )
            total = float(probs.sum())
            if abs(total - 1.0) > PROB_SUM_TOLERANCE:
                raise ScoreImportError(
                    f"row {line_number}: probabilities sum to {total:.6f},"
                    f" outside [{1 - PROB_SUM_TOLERANCE}, {1 + PROB_SUM_TOLERANCE}]"
                )
            table[key] = probs / total

    missing = [line.key for line in corpus_lines if line.key not in table]
    if missing:
        shown = ", ".join(map(str, missing[:10]))
        raise ScoreImportError(
            f"{len(missing)} corpus lines missing from score file; first: {shown}"
        )
    return [
        ClassDistribution(probs=table[line.key], key=line.key) for line in corpus_lines
    ]


def save_model(model: BaselineModel, directory: str | Path) -> None:
    """Model artifact: JSON config header plus an .npz weight file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    config = {
        "format_version": MODEL_FORMAT_VERSION,
        "feature_dim": model.feature_dim,
        "classes": list(model.classes),
        "ngram_range": list(model.ngram_range),
        "stopped_early": model.stopped_early,
        "history": model.history,
    }
    with open(directory / "config.json", "w", encoding="utf-8") as handle:
        json.dump(config, handle, indent=2)
    np.savez_compressed(
        directory / "weights.npz", weights=model.weights, bias=model.bias
    )


def load_model(directory: str | Path) -> BaselineModel:
    directory = Path(directory)
    with open(directory / "config.json", "r", encoding="utf-8") as handle:
        config = json.load(handle)
    version = config.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    arrays = np.load(directory / "weights.npz")
    return BaselineModel(
        feature_dim=int(config["feature_dim"]),
        weights=arrays["weights"],
        bias=arrays["bias"],
        classes=tuple(config["classes"]),
        ngram_range=tuple(config["ngram_range"]),
        history=[tuple(h) for h in config.get("history", [])],
        stopped_early=bool(config.get("stopped_early", False)),
    )
