from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    pass


def compute_auc(scores, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic.

    Tied scores count one half. Average ranks are half-integers, so twice the
    statistic is an exact integer and the result is one rounding of
    ``2U / (2 * n_pos * n_neg)``.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    pos = y == 1
    if not np.all(pos | (y == 0)):
        raise ValueError("labels must be 0/1")
    n1 = int(pos.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedMetricError("AUC needs both classes")
    twice_ranks = np.rint(2.0 * rankdata(s)).astype(np.int64)
    twice_u = int(twice_ranks[pos].sum()) - n1 * (n1 + 1)
    return twice_u / (2 * n1 * n0)


def compute_mse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {t.size} targets")
    if p.size == 0:
        raise ValueError("need at least one prediction")
    r = p - t
    return float(np.mean(r * r))
