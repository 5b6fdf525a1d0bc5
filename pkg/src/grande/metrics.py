"""Binary classification metrics and cross-method ranking aggregation."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .exceptions import DataError


def _binary_pair(labels, predictions):
    y = np.asarray(labels).ravel()
    p = np.asarray(predictions).ravel()
    if y.size == 0:
        raise DataError("metrics need at least one sample")
    if y.shape != p.shape:
        raise DataError(f"length mismatch: {y.size} labels, {p.size} predictions")
    if not (np.isin(y, (0, 1)).all() and np.isin(p, (0, 1)).all()):
        raise DataError("labels and predictions must be 0/1")
    return y.astype(np.int64), p.astype(np.int64)


def confusion_counts(labels, predictions):
    """Return ``(tn, fp, fn, tp)``."""
    y, p = _binary_pair(labels, predictions)
    tp = int(np.sum((y == 1) & (p == 1)))
    tn = int(np.sum((y == 0) & (p == 0)))
    fp = int(np.sum((y == 0) & (p == 1)))
    fn = int(np.sum((y == 1) & (p == 0)))
    return tn, fp, fn, tp


def macro_f1(labels, predictions) -> float:
    """Unweighted mean of the two per-class F1 scores.

    A class that appears in neither labels nor predictions scores 0.
    """
    tn, fp, fn, tp = confusion_counts(labels, predictions)
    scores = []
    for hit, false_pos, miss in ((tp, fp, fn), (tn, fn, fp)):
        denom = 2 * hit + false_pos + miss
        scores.append(2 * hit / denom if denom else 0.0)
    return float(np.mean(scores))


def balanced_accuracy(labels, predictions) -> float:
    """Mean recall over the classes present in ``labels``."""
    tn, fp, fn, tp = confusion_counts(labels, predictions)
    recalls = []
    if tp + fn:
        recalls.append(tp / (tp + fn))
    if tn + fp:
        recalls.append(tn / (tn + fp))
    return float(np.mean(recalls))


def roc_auc(labels, scores) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counted half."""
    y = np.asarray(labels).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.size == 0 or y.shape != s.shape:
        raise DataError("roc_auc needs equally long, non-empty labels and scores")
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be 0/1")
    n_pos = int(np.sum(y == 1))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("roc_auc is undefined when only one class is present")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def classification_report(labels, probabilities, threshold: float = 0.5) -> dict:
    labels = np.asarray(labels)
    predictions = (np.asarray(probabilities) >= threshold).astype(np.int64)
    report = {
        "macro_f1": macro_f1(labels, predictions),
        "balanced_accuracy": balanced_accuracy(labels, predictions),
    }
    try:
        report["roc_auc"] = roc_auc(labels, probabilities)
    except DataError:
        report["roc_auc"] = float("nan")
    return report


def aggregate_rankings(scores):
    """Normalized mean score and mean reciprocal rank per method.

    Parameters
    ----------
    scores : array-like, shape (n_datasets, n_methods)
        Higher is better.

    Returns
    -------
    normalized_means, mrr : ndarray of shape (n_methods,)
        Each dataset row is min-max scaled (best 1, worst 0, all equal 0.5)
        before averaging.  Ranks are by descending score; tied methods share
        the best rank of the tie.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] < 2:
        raise DataError("aggregate_rankings needs a (datasets x methods) matrix with >= 2 methods")
    lo = scores.min(axis=1, keepdims=True)
    hi = scores.max(axis=1, keepdims=True)
    span = hi - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        normalized = np.where(span > 0, (scores - lo) / np.where(span > 0, span, 1.0), 0.5)
    ranks = np.vstack([rankdata(-row, method="min") for row in scores])
    return normalized.mean(axis=0), (1.0 / ranks).mean(axis=0)
