"""Rank kernels behind ROC-AUC and average precision.

Both kernels take inputs already sorted by score (ascending for ranks,
descending for precision) and walk tie groups in one pass.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def midranks_nb(sorted_scores):
    """1-based ranks of ascending ``sorted_scores``; tied runs share their mean rank."""
    n = sorted_scores.shape[0]
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        mid = 0.5 * (i + j) + 1.0
        for k in range(i, j + 1):
            ranks[k] = mid
        i = j + 1
    return ranks


@njit(cache=True)
def average_precision_nb(sorted_scores, sorted_labels):
    """Σ ΔTP · precision over descending tie groups, divided by the positive count."""
    n = sorted_scores.shape[0]
    tp = 0
    fp = 0
    total = 0.0
    i = 0
    while i < n:
        j = i
        group_tp = 0
        while j < n and sorted_scores[j] == sorted_scores[i]:
            if sorted_labels[j]:
                group_tp += 1
            else:
                fp += 1
            j += 1
        tp += group_tp
        if group_tp > 0:
            total += group_tp * (tp / (tp + fp))
        i = j
    if tp == 0:
        return np.nan
    return total / tp
