"""Error and accuracy measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError

NMSE_MODES = ("power", "variance")


def nmse(pred, truth, mode: str = "power") -> float:
    """Normalized mean squared error.

    "power" divides the squared error by sum(y^2); "variance" by
    sum((y - mean y)^2).
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    if truth.size == 0:
        raise DegenerateInputError("empty target")
    if mode == "power":
        denom = np.sum(truth ** 2)
    elif mode == "variance":
        denom = np.sum((truth - truth.mean()) ** 2)
    else:
        raise ValueError(f"mode must be one of {NMSE_MODES}")
    if denom == 0:
        raise DegenerateInputError(f"target has zero {mode}; NMSE undefined")
    return float(np.sum((pred - truth) ** 2) / denom)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows true, columns predicted
    classes: tuple

    @property
    def accuracy(self) -> float:
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else float("nan")

    def per_class_recall(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.diag(self.counts) / self.counts.sum(axis=1)

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "counts": self.counts.tolist(), "accuracy": self.accuracy}

    def __str__(self):
        w = max(len(c) for c in self.classes)
        head = " " * (w + 1) + " ".join(f"{c[:6]:>6}" for c in self.classes)
        rows = [f"{c:>{w}} " + " ".join(f"{k:6d}" for k in r) for c, r in zip(self.classes, self.counts)]
        return "\n".join([head, *rows])


def confusion_matrix(true, pred, classes) -> ConfusionMatrix:
    true = np.asarray(true, dtype=int)
    pred = np.asarray(pred, dtype=int)
    k = len(classes)
    if true.shape != pred.shape:
        raise ValueError("label arrays differ in length")
    counts = np.zeros((k, k), dtype=int)
    np.add.at(counts, (true, pred), 1)
    return ConfusionMatrix(counts, tuple(classes))


def accuracy(true, pred) -> float:
    true, pred = np.asarray(true), np.asarray(pred)
    if true.size == 0:
        raise DegenerateInputError("no samples")
    return float(np.mean(true == pred))
