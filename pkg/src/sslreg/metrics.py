"""Classification metrics and the train-test gap report.

Zero-denominator conventions: a class F1 with no predicted or actual
positives is 0, and a Matthews correlation with a degenerate marginal is 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: tuple[int, ...]
    fp: tuple[int, ...]
    fn: tuple[int, ...]
    correct: int
    total: int

    @classmethod
    def from_pairs(cls, gold: Sequence[int], pred: Sequence[int],
                   num_classes: int | None = None) -> "ConfusionCounts":
        if len(gold) != len(pred):
            raise ValueError(f"gold and pred lengths differ: {len(gold)} vs {len(pred)}")
        if not gold:
            raise ValueError("no examples")
        if num_classes is None:
            num_classes = max(max(gold), max(pred)) + 1
        tp = [0] * num_classes
        fp = [0] * num_classes
        fn = [0] * num_classes
        correct = 0
        for g, p in zip(gold, pred):
            if not 0 <= g < num_classes or not 0 <= p < num_classes:
                raise ValueError(f"label outside [0, {num_classes}): gold {g}, pred {p}")
            if g == p:
                tp[g] += 1
                correct += 1
            else:
                fp[p] += 1
                fn[g] += 1
        return cls(tuple(tp), tuple(fp), tuple(fn), correct, len(gold))

    @property
    def num_classes(self) -> int:
        return len(self.tp)


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def micro_f1(counts: ConfusionCounts) -> float:
    return _f1(sum(counts.tp), sum(counts.fp), sum(counts.fn))


def macro_f1(counts: ConfusionCounts) -> float:
    per_class = [_f1(tp, fp, fn) for tp, fp, fn in zip(counts.tp, counts.fp, counts.fn)]
    return sum(per_class) / counts.num_classes


def accuracy(counts: ConfusionCounts) -> float:
    return counts.correct / counts.total


def matthews_corr(gold: Sequence[int], pred: Sequence[int]) -> float:
    """Multiclass Matthews correlation; 0 when a marginal is degenerate."""
    counts = ConfusionCounts.from_pairs(gold, pred)
    c, s = counts.correct, counts.total
    pred_per_class = np.array([counts.tp[k] + counts.fp[k] for k in range(counts.num_classes)],
                              dtype=np.float64)
    gold_per_class = np.array([counts.tp[k] + counts.fn[k] for k in range(counts.num_classes)],
                              dtype=np.float64)
    cov = c * s - float(pred_per_class @ gold_per_class)
    denom = math.sqrt(
        (s * s - float(pred_per_class @ pred_per_class))
        * (s * s - float(gold_per_class @ gold_per_class))
    )
    return cov / denom if denom else 0.0


def evaluate_pairs(gold: Sequence[int], pred: Sequence[int],
                   num_classes: int | None = None) -> dict[str, float]:
    """All four metrics from parallel gold/pred label lists."""
    counts = ConfusionCounts.from_pairs(gold, pred, num_classes)
    return {
        "accuracy": accuracy(counts),
        "micro_f1": micro_f1(counts),
        "macro_f1": macro_f1(counts),
        "matthews_corr": matthews_corr(gold, pred),
    }


def train_test_gap(
    predict: Callable[[Sequence], list[int]],
    train_examples: Sequence,
    test_examples: Sequence,
    metric: Callable[[Sequence[int], Sequence[int]], float],
) -> tuple[float, float, float]:
    """(train value, test value, train - test) for one metric.

    A positive difference means the model does better on data it trained on,
    i.e. overfits; the difference may be negative.
    """
    train_value = metric([e.label for e in train_examples], predict(train_examples))
    test_value = metric([e.label for e in test_examples], predict(test_examples))
    return train_value, test_value, train_value - test_value


def macro_f1_pairs(gold: Sequence[int], pred: Sequence[int]) -> float:
    return macro_f1(ConfusionCounts.from_pairs(gold, pred))


def micro_f1_pairs(gold: Sequence[int], pred: Sequence[int]) -> float:
    return micro_f1(ConfusionCounts.from_pairs(gold, pred))


def accuracy_pairs(gold: Sequence[int], pred: Sequence[int]) -> float:
    return accuracy(ConfusionCounts.from_pairs(gold, pred))
