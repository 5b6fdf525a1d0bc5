"""Hand-derived backward pass for the ensemble and a finite-difference check.

Straight-through rules: rounding of the split surrogate and the hardmax over
index logits are treated as the identity in the backward pass.  The leaf
selection is therefore held fixed within one step, and the gradient of the
split pre-activation ``z = iota . x - iota . tau`` with respect to the index
logits is ``x - tau`` for every unmasked feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, ModelError
from .losses import batch_loss
from .model import EnsembleParameters, ForwardTrace, build_path_table, masked_softmax, split_surrogate


@dataclass
class GradientSet:
    index_logits: np.ndarray
    thresholds: np.ndarray
    leaf_values: np.ndarray
    leaf_weights: np.ndarray

    def arrays(self) -> dict:
        return {g: getattr(self, g) for g in EnsembleParameters.GROUPS}

    def is_finite(self) -> bool:
        return all(bool(np.isfinite(a).all()) for a in self.arrays().values())


def _tree_output_grads(trace_weights, tree_pred, logit, loss_grads, active, sample_mask):
    """Gradients of the loss w.r.t. each tree's prediction and raw weight."""
    w = trace_weights
    dg = loss_grads[:, None] * w
    # softmax Jacobian: d logit / d r_e = w_e (g_e - logit)
    dr = loss_grads[:, None] * w * (tree_pred - logit[:, None])
    dr = np.where(active[None, :], dr, 0.0)
    if sample_mask is not None:
        dg = np.where(sample_mask, dg, 0.0)
        dr = np.where(sample_mask, dr, 0.0)
    return dg, dr


def _split_param_grads(dz, x, params, iota=None):
    """Thresholds and index-logit gradients from per-node ``dz`` (B, E, M)."""
    E, M, n = params.index_logits.shape
    B = x.shape[0]
    dz_sum = dz.sum(axis=0)
    dzx = (dz.transpose(1, 2, 0).reshape(E * M, B) @ x).reshape(E, M, n)
    d_index = dzx - params.thresholds * dz_sum[..., None]
    d_index = np.where(params.feature_masks[:, None, :], d_index, 0.0)
    if iota is None:
        d_thr = np.zeros_like(params.thresholds)
        sel = params.selected_features()
        np.put_along_axis(d_thr, sel[..., None], -dz_sum[..., None], axis=2)
    else:
        d_thr = -dz_sum[..., None] * iota
    return d_index, d_thr


def _tie_estimator_weights(d_weights):
    return np.repeat(d_weights.sum(axis=1, keepdims=True), d_weights.shape[1], axis=1)


def backward_batch(
    params: EnsembleParameters,
    trace: ForwardTrace,
    loss_grads: np.ndarray,
    sample_mask: np.ndarray | None = None,
    weighting: str = "leaf",
) -> GradientSet:
    """Backward pass for a hard forward trace.

    ``loss_grads`` holds d(loss)/d(logit) per sample; contributions are summed
    over the batch, so pass the gradient of a mean loss to get averaged
    parameter gradients.  ``sample_mask`` (B, E) zeroes the contribution of
    sample ``b`` to tree ``e``.

    Under hard splits each leaf indicator depends on a node only if the
    sample reaches that node; its derivative with respect to the node's split
    is +1 for the leaf reached through the hard-1 child and -1 for the leaf
    reached through the other child.
    """
    loss_grads = np.asarray(loss_grads, dtype=np.float64)
    B, E = trace.leaf.shape
    if loss_grads.shape != (B,):
        raise ModelError(f"loss_grads has shape {loss_grads.shape}, expected ({B},)")
    depth = params.depth
    M, L = params.n_internal, params.n_leaves

    dg, dr = _tree_output_grads(trace.weights, trace.tree_pred, trace.logit, loss_grads, trace.active, sample_mask)

    tree_leaf = np.arange(E)[None, :] * L + trace.leaf
    d_values = np.bincount(tree_leaf.ravel(), dg.ravel(), E * L).reshape(E, L)
    d_weights = np.bincount(tree_leaf.ravel(), dr.ravel(), E * L).reshape(E, L)

    # flat views: node m of (b, e) lives at ((b * E) + e) * M + m
    hard = trace.hard.reshape(-1)
    base = np.arange(B * E).reshape(B, E) * M
    values = params.leaf_values.reshape(-1)
    weights = params.leaf_weights.reshape(-1)
    tree_base = np.arange(E)[None, :] * L

    def upstream(leaf):
        flat = tree_base + leaf
        return dg * values[flat] + dr * weights[flat]

    g_reached = upstream(trace.leaf)
    path = trace.path_nodes
    d_split = np.empty((B, E, depth))
    for j in range(depth):
        node = path[..., j]
        went_hi = hard[base + node]
        # leaf reached by hard routing from the child not taken
        other = np.where(went_hi, 2 * node + 2, 2 * node + 1)
        for _ in range(j + 1, depth):
            other = 2 * other + 1 + ~hard[base + other]
        g_other = upstream(other - M)
        d_split[..., j] = np.where(went_hi, g_reached - g_other, g_other - g_reached)
    dz_path = d_split * trace.dsoft
    dz = np.zeros(B * E * M)
    dz[(base[..., None] + path).ravel()] = dz_path.ravel()
    dz = dz.reshape(B, E, M)

    d_index, d_thr = _split_param_grads(dz, trace.x, params)
    if weighting == "estimator":
        d_weights = _tie_estimator_weights(d_weights)
    return GradientSet(d_index, d_thr, d_values, d_weights)


# ---------------------------------------------------------------------------
# Soft forward / dense backward (verification path)
# ---------------------------------------------------------------------------


def frozen_selection(params: EnsembleParameters) -> np.ndarray:
    """One-hot feature selection (E, M, n) of the current index logits."""
    iota = np.zeros_like(params.index_logits)
    np.put_along_axis(iota, params.selected_features()[..., None], 1.0, axis=2)
    return iota


def _leaf_factors(split, table):
    s = split[..., table.node_index]  # (B, E, L, d)
    p = table.branch_side
    return (1 - p) * s + p * (1 - s)


def soft_forward(
    x: np.ndarray,
    params: EnsembleParameters,
    kind: str = "softsign",
    iota: np.ndarray | None = None,
    active: np.ndarray | None = None,
    hard: bool = False,
):
    """Forward pass with product-form leaf indicators.

    With ``hard=False`` no rounding is applied, so the output is a smooth
    function of thresholds, leaf values, leaf weights and of a continuous
    feature selection ``iota`` (the frozen hardmax one-hot by default).
    With ``hard=True`` the split values are rounded and the result equals
    :func:`grande.model.ensemble_forward`.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if iota is None:
        iota = frozen_selection(params)
    if active is None:
        active = np.ones(params.n_estimators, dtype=bool)
    table = build_path_table(params.depth)
    z = np.einsum("bn,emn->bem", x, iota) - (iota * params.thresholds).sum(axis=2)[None]
    soft, dsoft = split_surrogate(z, kind)
    split = (z >= 0).astype(np.float64) if hard else soft
    factors = _leaf_factors(split, table)
    member = factors.prod(axis=3)
    tree_pred = np.einsum("bel,el->be", member, params.leaf_values)
    raw = np.einsum("bel,el->be", member, params.leaf_weights)
    weights = masked_softmax(raw, active)
    logit = np.einsum("be,be->b", weights, tree_pred)
    cache = dict(x=x, iota=iota, dsoft=dsoft, factors=factors, member=member, tree_pred=tree_pred,
                 weights=weights, active=active, logit=logit, table=table)
    return logit, cache


def dense_backward(params, cache, loss_grads, sample_mask=None, weighting: str = "leaf") -> GradientSet:
    """Backward pass through :func:`soft_forward` using full products."""
    loss_grads = np.asarray(loss_grads, dtype=np.float64)
    table = cache["table"]
    depth = table.depth
    factors, member = cache["factors"], cache["member"]
    B, E = member.shape[:2]
    dg, dr = _tree_output_grads(cache["weights"], cache["tree_pred"], cache["logit"], loss_grads,
                                cache["active"], sample_mask)
    d_values = np.einsum("be,bel->el", dg, member)
    d_weights = np.einsum("be,bel->el", dr, member)
    G = dg[..., None] * params.leaf_values[None] + dr[..., None] * params.leaf_weights[None]

    ones = np.ones(factors.shape[:3] + (1,))
    prefix = np.concatenate([ones, np.cumprod(factors, axis=3)[..., :-1]], axis=3)
    suffix = np.concatenate([np.cumprod(factors[..., ::-1], axis=3)[..., ::-1][..., 1:], ones], axis=3)
    sign = 1 - 2 * table.branch_side  # (L, d)
    contrib = G[..., None] * prefix * suffix * sign  # (B, E, L, d)

    d_split = np.zeros((B, E, params.n_internal))
    for j in range(depth):
        lo = (1 << j) - 1
        d_split[..., lo : lo + (1 << j)] = contrib[..., j].reshape(B, E, 1 << j, -1).sum(axis=3)
    dz = d_split * cache["dsoft"]
    d_index, d_thr = _split_param_grads(dz, cache["x"], params, iota=cache["iota"])
    if weighting == "estimator":
        d_weights = _tie_estimator_weights(d_weights)
    return GradientSet(d_index, d_thr, d_values, d_weights)


# ---------------------------------------------------------------------------
# Finite-difference check
# ---------------------------------------------------------------------------


def fd_check(
    params: EnsembleParameters,
    x: np.ndarray,
    y: np.ndarray,
    epsilon: float = 1e-5,
    kind: str = "softsign",
    class_weights=(1.0, 1.0),
    gamma: float = 0.0,
) -> dict:
    """Compare analytic gradients of the soft loss with central differences.

    Returns the maximum of ``|analytic - fd| / max(1, |fd|)`` per parameter
    group.  Index logits are piecewise constant in the true model, so for
    them the check perturbs the frozen one-hot selection itself: this
    validates the pass-through contract, not a derivative of the hardmax.
    """
    if not epsilon > 0:
        raise ConfigError("epsilon must be positive")
    iota = frozen_selection(params)

    def loss_of(p, sel):
        logit, _ = soft_forward(x, p, kind, iota=sel)
        return batch_loss(logit, y, class_weights, gamma)[0]

    logit, cache = soft_forward(x, params, kind, iota=iota)
    _, dlogit = batch_loss(logit, y, class_weights, gamma)
    analytic = dense_backward(params, cache, dlogit)

    report = {}
    for group in ("thresholds", "leaf_values", "leaf_weights"):
        base = getattr(params, group)
        worst = 0.0
        for idx in np.ndindex(base.shape):
            orig = base[idx]
            base[idx] = orig + epsilon
            up = loss_of(params, iota)
            base[idx] = orig - epsilon
            down = loss_of(params, iota)
            base[idx] = orig
            fd = (up - down) / (2 * epsilon)
            worst = max(worst, abs(getattr(analytic, group)[idx] - fd) / max(1.0, abs(fd)))
        report[group] = worst

    worst = 0.0
    for idx in np.ndindex(iota.shape):
        if not params.feature_masks[idx[0], idx[2]]:
            continue
        orig = iota[idx]
        iota[idx] = orig + epsilon
        up = loss_of(params, iota)
        iota[idx] = orig - epsilon
        down = loss_of(params, iota)
        iota[idx] = orig
        fd = (up - down) / (2 * epsilon)
        worst = max(worst, abs(analytic.index_logits[idx] - fd) / max(1.0, abs(fd)))
    report["index_logits"] = worst
    return report
