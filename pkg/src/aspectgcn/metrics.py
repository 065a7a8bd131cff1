"""Accuracy and macro-F1, plus per-fold result aggregation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import POLARITIES


def accuracy(y_true: Sequence[int], y_pred: Sequence[int]) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError("label and prediction vectors differ in length")
    if y_true.size == 0:
        raise ValueError("cannot score an empty set of predictions")
    return int((y_true == y_pred).sum()) / y_true.size


def macro_f1(
    y_true: Sequence[int], y_pred: Sequence[int], num_classes: int = len(POLARITIES)
) -> float:
    """Unweighted mean of per-class F1; a class absent from both labels and
    predictions scores 0."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError("label and prediction vectors differ in length")
    if y_true.size == 0:
        raise ValueError("cannot score an empty set of predictions")
    if ((y_true < 0) | (y_true >= num_classes)).any() or (
        (y_pred < 0) | (y_pred >= num_classes)
    ).any():
        raise ValueError(f"labels outside the {num_classes}-class space")
    total = 0.0
    for c in range(num_classes):
        tp = int(((y_pred == c) & (y_true == c)).sum())
        fp = int(((y_pred == c) & (y_true != c)).sum())
        fn = int(((y_pred != c) & (y_true == c)).sum())
        denom = 2 * tp + fp + fn
        total += (2 * tp) / denom if denom else 0.0
    return total / num_classes


@dataclass
class FoldResult:
    fold: int
    best_val_accuracy: float
    test_accuracy: float
    test_macro_f1: float


@dataclass
class RunMetrics:
    """Per-fold test scores; the aggregate is their arithmetic mean."""

    folds: list[FoldResult] = field(default_factory=list)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([f.test_accuracy for f in self.folds]))

    @property
    def mean_macro_f1(self) -> float:
        return float(np.mean([f.test_macro_f1 for f in self.folds]))

    def to_json_lines(self, config_hash: str = "") -> str:
        lines = []
        for f in self.folds:
            lines.append(json.dumps({
                "record": "fold",
                "fold": f.fold,
                "best_val_accuracy": f.best_val_accuracy,
                "test_accuracy": f.test_accuracy,
                "test_macro_f1": f.test_macro_f1,
                "config_hash": config_hash,
            }))
        if self.folds:
            lines.append(json.dumps({
                "record": "aggregate",
                "mean_accuracy": self.mean_accuracy,
                "mean_macro_f1": self.mean_macro_f1,
                "folds": len(self.folds),
                "config_hash": config_hash,
            }))
        return "\n".join(lines)

    def to_tsv(self, config_hash: str = "") -> str:
        rows = []
        if config_hash:
            rows.append(f"# config_hash={config_hash}")
        rows.append("fold\tbest_val_accuracy\ttest_accuracy\ttest_macro_f1")
        for f in self.folds:
            rows.append(
                f"{f.fold}\t{f.best_val_accuracy!r}\t{f.test_accuracy!r}\t{f.test_macro_f1!r}"
            )
        if self.folds:
            rows.append(f"mean\t\t{self.mean_accuracy!r}\t{self.mean_macro_f1!r}")
        return "\n".join(rows)
