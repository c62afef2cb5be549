"""Independent oracles used by the tests.

Deliberately written as straight-line brute force, separate from the
library's implementations: finite-difference gradients, exhaustive
subset-assignment search, pair-counting AUC, and a threshold-sweep
TPR@FPR.
"""

import itertools

import numpy as np


def finite_difference_grad(f, params, h=1e-5):
    """Central finite differences of a scalar function of a flat vector."""
    g = np.zeros_like(params)
    for i in range(len(params)):
        hi, lo = params.copy(), params.copy()
        hi[i] += h
        lo[i] -= h
        g[i] = (f(hi) - f(lo)) / (2.0 * h)
    return g


def max_rel_error(analytic, reference):
    """Max absolute gap normalized by the reference's largest magnitude."""
    scale = max(float(np.max(np.abs(reference))), 1e-12)
    return float(np.max(np.abs(analytic - reference))) / scale


def brute_min_max_overlap(num_classes, coalition_size, m, lower_bound=0):
    """Exhaustive minimum over covering assignments of the max pairwise overlap.

    Early-exits once the supplied lower bound is met (it cannot be beaten).
    """
    subsets = [frozenset(c) for c in itertools.combinations(range(num_classes), m)]
    full = frozenset(range(num_classes))
    best = m + 1
    for combo in itertools.combinations_with_replacement(subsets, coalition_size):
        if frozenset().union(*combo) != full:
            continue
        worst = max(len(a & b) for a, b in itertools.combinations(combo, 2))
        best = min(best, worst)
        if best <= lower_bound:
            break
    return best


def pair_counting_auc(scores, labels):
    """AUC by enumerating every (positive, negative) pair; ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def sweep_tpr_at_fpr(scores, labels, level):
    """Max TPR over all score thresholds whose empirical FPR stays <= level."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    best = 0.0
    thresholds = np.unique(scores)
    for thr in thresholds:  # predict member when score >= thr
        pred = scores >= thr
        fpr = float((pred & (labels == 0)).sum()) / n_neg
        tpr = float((pred & (labels == 1)).sum()) / n_pos
        if fpr <= level:
            best = max(best, tpr)
    return best


def trapezoid_auc(scores, labels):
    """ROC integration by the trapezoid rule over all achievable points."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    order = np.argsort(-scores, kind="stable")
    s, lab = scores[order], labels[order]
    n_pos = int((lab == 1).sum())
    n_neg = int((lab == 0).sum())
    tp = fp = 0
    fpr_pts, tpr_pts = [0.0], [0.0]
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:  # tied scores move together
            tp += int(lab[j] == 1)
            fp += int(lab[j] == 0)
            j += 1
        fpr_pts.append(fp / n_neg)
        tpr_pts.append(tp / n_pos)
        i = j
    return float(np.trapezoid(tpr_pts, fpr_pts))
