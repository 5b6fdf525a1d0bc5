"""Class-weighted focal binary cross-entropy on logits."""

from __future__ import annotations

import numpy as np

from .exceptions import DataError


def _softplus(z):
    return np.logaddexp(0.0, z)


def focal_weighted_bce(logit, label, class_weight=1.0, gamma: float = 0.0):
    """Per-sample loss and its derivative with respect to ``logit``.

    ``loss = w * (1 - p_t)**gamma * -log(p_t)`` where ``p_t`` is the
    predicted probability of the true label.  All terms are evaluated in
    log-sum-exp form so large ``|logit|`` stays finite.
    """
    logit = np.asarray(logit, dtype=np.float64)
    label = np.asarray(label)
    if not np.isin(label, (0, 1)).all():
        raise DataError("labels must be 0 or 1")
    if gamma < 0:
        raise DataError("gamma must be non-negative")
    sign = 2.0 * label - 1.0
    zt = sign * logit
    nll = _softplus(-zt)  # -log p_t
    p_t = np.exp(-nll)
    q = np.exp(-_softplus(zt))  # 1 - p_t without cancellation
    mod = q**gamma
    loss = class_weight * mod * nll
    grad = sign * class_weight * mod * (-gamma * p_t * nll - q)
    return loss, grad


def batch_loss(logit, labels, class_weights=(1.0, 1.0), gamma: float = 0.0):
    """Mean loss over a batch and the gradient of that mean per logit."""
    labels = np.asarray(labels)
    w = np.where(labels == 1, class_weights[1], class_weights[0])
    loss, grad = focal_weighted_bce(logit, labels, w, gamma)
    n = max(len(labels), 1)
    return float(loss.sum() / n), grad / n
