"""Exact ROC-AUC and average precision, binary and one-vs-rest macro."""
from typing import Callable, Optional, Sequence

import numpy as np

from src.evaluation.nb.rank_nb import average_precision_nb, midranks_nb
from src.types import FloatArray, IntArray


class MetricError(ValueError):
    """Raised when a metric is undefined for its input (missing class, NaN scores)."""


def _binary_inputs(scores, labels, op: str) -> tuple[FloatArray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    if s.shape != y.shape:
        raise MetricError(f"{op}: {s.shape[0]} scores but {y.shape[0]} labels")
    if not np.all(np.isfinite(s)):
        raise MetricError(f"{op}: scores must be finite")
    return s, y


def roc_auc(scores, labels) -> float:
    """P(score⁺ > score⁻) + ½·P(tie), exactly, from midranks.

    Raises:
        MetricError: If only one class is present.
    """
    s, y = _binary_inputs(scores, labels, "roc_auc")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"roc_auc: needs both classes, got {n_pos} positive / {n_neg} negative")
    order = np.argsort(s, kind="mergesort")
    ranks = midranks_nb(s[order])
    rank_sum = float(ranks[y[order]].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def pr_auc(scores, labels) -> float:
    """Average precision with step interpolation over distinct score thresholds.

    Tied scores form one threshold, so every positive in a tie group gets the
    group's precision. A strict rank-by-rank average precision would instead
    depend on how ties happen to be ordered.
    """
    s, y = _binary_inputs(scores, labels, "pr_auc")
    if not y.any():
        raise MetricError("pr_auc: needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    return float(average_precision_nb(s[order], y[order]))


def accuracy(predicted: IntArray, labels: IntArray) -> float:
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    if predicted.size == 0:
        raise MetricError("accuracy: empty input")
    return float(np.mean(predicted == labels))


def one_vs_rest(scores: FloatArray, labels: IntArray, n_classes: int,
                metric: Callable[[FloatArray, np.ndarray], float]) -> list[Optional[float]]:
    """Per-class binary metric of column k against ``labels == k``.

    Classes that leave the binary problem undefined (no positives, or no
    negatives for ROC) yield ``None``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    out: list[Optional[float]] = []
    for k in range(n_classes):
        try:
            out.append(metric(scores[:, k], labels == k))
        except MetricError:
            out.append(None)
    return out


def macro(values: Sequence[Optional[float]]) -> float:
    """Unweighted mean over the defined per-class values."""
    defined = [v for v in values if v is not None]
    if not defined:
        raise MetricError("macro: no class has a defined metric")
    return float(np.mean(defined))
