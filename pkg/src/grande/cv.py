"""Stratified k-fold cross-validation of the full preprocess + train pipeline."""

from __future__ import annotations

import numpy as np

from .exceptions import DataError
from .io import Dataset, GrandeModel
from .metrics import classification_report
from .training import TrainConfig


def stratified_folds(labels, k: int = 5, seed: int = 0) -> np.ndarray:
    """Fold id per sample; each class is shuffled and dealt round-robin."""
    labels = np.asarray(labels)
    if k < 2:
        raise DataError("k must be at least 2")
    rng = np.random.default_rng(seed)
    folds = np.empty(labels.size, dtype=np.int64)
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        if idx.size < k:
            raise DataError(f"class {c} has {idx.size} samples, fewer than k={k} folds")
        folds[idx[rng.permutation(idx.size)]] = np.arange(idx.size) % k
    return folds


def run_cv(data: Dataset, config: TrainConfig | None = None, k: int = 5, on_fold=None) -> dict:
    """Per-fold and aggregate test metrics.

    The preprocessor is refitted on each training split.  ``on_fold`` is
    called as ``on_fold(fold, model, train_idx, test_idx)`` after each fold.
    """
    config = config or TrainConfig()
    if data.labels is None:
        raise DataError("cross-validation needs labelled data")
    folds = stratified_folds(data.labels, k, config.seed)
    results = []
    for fold in range(k):
        train_idx = np.flatnonzero(folds != fold)
        test_idx = np.flatnonzero(folds == fold)
        model = GrandeModel.train(data.subset(train_idx), config)
        test = data.subset(test_idx)
        report = classification_report(test.labels, model.predict_proba(test))
        report.update(fold=fold, n_train=int(train_idx.size), n_test=int(test_idx.size),
                      epochs=len(model.history))
        results.append(report)
        if on_fold is not None:
            on_fold(fold, model, train_idx, test_idx)

    summary = {}
    for metric in ("macro_f1", "balanced_accuracy", "roc_auc"):
        values = np.array([r[metric] for r in results])
        summary[metric] = {"mean": float(values.mean()), "std": float(values.std(ddof=1))}
    return {"k": k, "folds": results, "summary": summary}
