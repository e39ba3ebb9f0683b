from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with ties counted one half.

    Returns NaN when either class is absent (AUC undefined).
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(scores, method="average")
    # doubled ranks are integers, so the U statistic is exact
    u2 = int(round(2 * ranks[pos].sum())) - n_pos * (n_pos + 1)
    return (u2 / 2) / (n_pos * n_neg)


def multitask_auc(scores, labels) -> tuple[float, list[float], list[int]]:
    """Mean AUC over tasks with a defined AUC; NaN labels are ignored.

    Returns ``(mean, per_task, excluded_task_indices)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.ndim == 1:
        scores, labels = scores[:, None], labels[:, None]
    per_task, excluded = [], []
    for t in range(labels.shape[1]):
        keep = ~np.isnan(labels[:, t])
        auc = roc_auc(scores[keep, t], labels[keep, t])
        per_task.append(auc)
        if math.isnan(auc):
            excluded.append(t)
    defined = [a for a in per_task if not math.isnan(a)]
    return (float(np.mean(defined)) if defined else math.nan), per_task, excluded
