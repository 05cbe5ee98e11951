"""Platt scaling: calibrated binary Clean-probability from classifier scores.

The raw score is the probability mass the classifier puts on the Clean class;
a two-parameter logistic map fitted on held-out data corrects for the heavy
Clean/non-Clean imbalance. Targets use Platt's out-of-sample smoothing
correction, which keeps the fit finite even on one-class data.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .classifier import ClassDistribution

CLEAN_CLASS_INDEX = 0
GRADIENT_TOLERANCE = 1e-8
MAX_NEWTON_ITERATIONS = 100


class CalibrationError(RuntimeError):
    """Platt fitting failed to converge within the iteration cap."""


@dataclass(frozen=True)
class PlattParams:
    a: float  # slope; positive slopes preserve score ranking
    b: float  # intercept

    def __post_init__(self) -> None:
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError("Platt parameters must be finite")

    def to_dict(self) -> dict[str, Any]:
        return {"a": self.a, "b": self.b}


def clean_probability(dist: ClassDistribution) -> float:
    """Raw score: probability mass on the Clean class."""
    return float(dist.probs[CLEAN_CLASS_INDEX])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    positive = z >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
    ez = np.exp(z[~positive])
    out[~positive] = ez / (1.0 + ez)
    return out


def platt_nll(scores: np.ndarray, targets: np.ndarray, a: float, b: float) -> float:
    p = np.clip(_sigmoid(a * scores + b), 1e-15, 1 - 1e-15)
    return float(-(targets * np.log(p) + (1 - targets) * np.log(1 - p)).sum())


def fit_platt(
    scores: Sequence[float],
    labels: Sequence[bool | int],
    tol: float = GRADIENT_TOLERANCE,
    max_iter: int = MAX_NEWTON_ITERATIONS,
) -> PlattParams:
    """Fit the logistic map by Newton iterations on the smoothed-target
    likelihood (targets (N+ + 1)/(N+ + 2) and 1/(N- + 2)).

    Converges to gradient norm ``tol``; raises :class:`CalibrationError` with
    diagnostics when the iteration cap is hit.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    if len(s) < 10:
        raise ValueError("need at least 10 points to fit calibration")

    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    hi_target = (n_pos + 1.0) / (n_pos + 2.0)
    lo_target = 1.0 / (n_neg + 2.0)
    targets = np.where(y, hi_target, lo_target)

    a = 0.0
    b = float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    nll = platt_nll(s, targets, a, b)
    for iteration in range(max_iter):
        p = _sigmoid(a * s + b)
        residual = p - targets
        grad = np.array([float(residual @ s), float(residual.sum())])
        if float(np.hypot(*grad)) <= tol:
            return PlattParams(a=a, b=b)
        w = np.maximum(p * (1 - p), 1e-12)
        hessian = np.array(
            [
                [float(w @ (s * s)), float(w @ s)],
                [float(w @ s), float(w.sum())],
            ]
        )
        hessian += 1e-12 * np.eye(2)
        step = np.linalg.solve(hessian, grad)
        # backtracking keeps Newton monotone far from the optimum
        scale = 1.0
        for _ in range(60):
            candidate = platt_nll(s, targets, a - scale * step[0], b - scale * step[1])
            if candidate <= nll + 1e-12:
                break
            scale *= 0.5
        a -= scale * step[0]
        b -= scale * step[1]
        nll = platt_nll(s, targets, a, b)
    raise CalibrationError(
        f"no convergence after {max_iter} iterations"
        f" (gradient norm {float(np.hypot(*grad)):.3e}, a={a:.6f}, b={b:.6f})"
    )


def apply_platt(params: PlattParams, score: float | np.ndarray) -> float | np.ndarray:
    """Calibrated probability logistic(a * score + b), strictly inside (0, 1)."""
    z = np.asarray(params.a * np.asarray(score, dtype=np.float64) + params.b)
    calibrated = _sigmoid(z)
    tiny = np.finfo(np.float64).tiny
    calibrated = np.clip(calibrated, tiny, 1.0 - np.finfo(np.float64).epsneg)
    if np.ndim(score) == 0:
        return float(calibrated)
    return calibrated


def dataset_hash(scores: Sequence[float], labels: Sequence[bool | int]) -> str:
    digest = hashlib.sha256()
    digest.update(np.asarray(scores, dtype=np.float64).tobytes())
    digest.update(np.asarray(labels, dtype=np.int8).tobytes())
    return digest.hexdigest()


def save_platt(
    params: PlattParams, path: str | Path, fitted_on: str = "", n: int = 0
) -> None:
    payload = {"a": params.a, "b": params.b, "fitted_on": fitted_on, "n": n}
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2)


def load_platt(path: str | Path) -> PlattParams:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    return PlattParams(a=float(payload["a"]), b=float(payload["b"]))
