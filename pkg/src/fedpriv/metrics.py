"""Binary-score evaluation: AUC via the rank statistic and TPR at low FPR."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

DEFAULT_FPR_LEVELS = (0.001, 0.01, 0.1)


def auc_score(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve from the rank statistic; ties count 1/2.

    labels: 1 for the positive class (member), 0 otherwise. Both classes
    must be present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present")
    ranks = rankdata(scores)  # average ranks for ties
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_points(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Achievable (FPR, TPR) operating points, sweeping thresholds high to low.

    Starts at (0, 0) (predict nothing) and only cuts between distinct score
    values, so tied scores move together.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(1 - sorted_labels)
    distinct = np.flatnonzero(np.diff(sorted_scores) != 0)
    cuts = np.concatenate([distinct, [len(scores) - 1]])
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    fpr = np.concatenate([[0.0], fp[cuts] / n_neg])
    tpr = np.concatenate([[0.0], tp[cuts] / n_pos])
    return fpr, tpr


def tpr_at_fpr(
    scores: np.ndarray, labels: np.ndarray, levels=DEFAULT_FPR_LEVELS
) -> dict[float, float]:
    """Best achievable TPR at each empirical FPR budget."""
    fpr, tpr = roc_points(scores, labels)
    out = {}
    for level in levels:
        feasible = tpr[fpr <= level]
        out[float(level)] = float(feasible.max()) if len(feasible) else 0.0
    return out
