"""Per-instance estimator weights: distribution statistics, pruning, explanations."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError
from .model import EnsembleParameters, ensemble_forward, logistic


def estimator_weights(params: EnsembleParameters, x, kind: str = "softsign", chunk: int = 2048) -> np.ndarray:
    """Post-softmax weight of every tree for every row of ``x`` (N, E)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return np.vstack([ensemble_forward(x[i : i + chunk], params, kind)[1].weights for i in range(0, len(x), chunk)])


def moment_shape(values) -> tuple:
    """Population skewness ``m3 / m2**1.5`` and excess kurtosis ``m4 / m2**2 - 3``
    along the last axis; both are 0 where the variance vanishes."""
    v = np.asarray(values, dtype=np.float64)
    centered = v - v.mean(axis=-1, keepdims=True)
    m2 = np.mean(centered**2, axis=-1)
    m3 = np.mean(centered**3, axis=-1)
    m4 = np.mean(centered**4, axis=-1)
    # variance at rounding level of the data counts as zero
    scale = np.max(np.abs(v), axis=-1)
    flat = m2 <= (64 * np.finfo(np.float64).eps * scale) ** 2
    safe = np.where(flat, 1.0, m2)
    skew = np.where(flat, 0.0, m3 / safe**1.5)
    kurt = np.where(flat, 0.0, m4 / safe**2 - 3.0)
    return skew, kurt


# ---------------------------------------------------------------------------
# Pruned trees
# ---------------------------------------------------------------------------


@dataclass
class Leaf:
    leaf: int
    value: float

    def predict(self, x):
        return np.full(len(x), self.value)

    @property
    def n_internal(self) -> int:
        return 0

    @property
    def n_leaves(self) -> int:
        return 1


@dataclass
class Split:
    node: int
    feature: int
    threshold: float
    hi: "Leaf | Split"  # taken when x[feature] >= threshold
    lo: "Leaf | Split"

    def predict(self, x):
        x = np.atleast_2d(x)
        go_hi = x[:, self.feature] - self.threshold >= 0
        out = np.empty(len(x))
        if go_hi.any():
            out[go_hi] = self.hi.predict(x[go_hi])
        if (~go_hi).any():
            out[~go_hi] = self.lo.predict(x[~go_hi])
        return out

    @property
    def n_internal(self) -> int:
        return 1 + self.hi.n_internal + self.lo.n_internal

    @property
    def n_leaves(self) -> int:
        return self.hi.n_leaves + self.lo.n_leaves


def prune_tree(params: EnsembleParameters, tree: int, reference) -> "Leaf | Split":
    """Simplify one tree using the rows of ``reference``.

    Branches no reference row reaches are dropped, and a split whose two
    subtrees predict the same value for every reference row reaching it is
    replaced by the smaller subtree.  Predictions on ``reference`` are
    unchanged.
    """
    x = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    if len(x) == 0:
        raise DataError("pruning needs at least one reference row")
    M = params.n_internal
    sel = params.selected_features()[tree]
    tau = params.selected_thresholds()[tree]
    values = params.leaf_values[tree]

    def build(node, rows):
        if node >= M:
            return Leaf(node - M, float(values[node - M]))
        f = int(sel[node])
        go_hi = x[rows, f] - tau[node] >= 0
        hi_rows, lo_rows = rows[go_hi], rows[~go_hi]
        if lo_rows.size == 0:
            return build(2 * node + 1, hi_rows)
        if hi_rows.size == 0:
            return build(2 * node + 2, lo_rows)
        hi = build(2 * node + 1, hi_rows)
        lo = build(2 * node + 2, lo_rows)
        if np.array_equal(hi.predict(x[rows]), lo.predict(x[rows])):
            return lo if lo.n_internal < hi.n_internal else hi
        return Split(node, f, float(tau[node]), hi, lo)

    return build(0, np.arange(len(x)))


def render_tree(root, preprocessor=None, feature_names=None, indent: str = "  ") -> str:
    """Nested if/else text for a pruned tree."""
    lines = []

    def describe(node):
        if preprocessor is not None:
            return preprocessor.describe_split(node.feature, node.threshold)
        name = feature_names[node.feature] if feature_names else f"x[{node.feature}]"
        return f"{name} >= {node.threshold:.6g}", f"{name} < {node.threshold:.6g}"

    def walk(node, level):
        pad = indent * level
        if isinstance(node, Leaf):
            lines.append(f"{pad}predict logit {node.value:.6g} (p={float(logistic(node.value)):.4f})")
            return
        yes, no = describe(node)
        lines.append(f"{pad}if {yes}:")
        walk(node.hi, level + 1)
        lines.append(f"{pad}else:  # {no}")
        walk(node.lo, level + 1)

    walk(root, 0)
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Weight statistics
# ---------------------------------------------------------------------------


@dataclass
class WeightReport:
    weights: np.ndarray
    argmax: np.ndarray
    max_weight: np.ndarray
    modal_share: float
    distinct_argmax: int
    modal_share_top5: float
    distinct_argmax_top5: int
    skewness: float
    kurtosis: float
    skewness_top5: float
    kurtosis_top5: float
    mean_internal_nodes: float
    mean_leaf_nodes: float

    def to_dict(self) -> dict:
        return {
            "n_samples": int(self.weights.shape[0]),
            "n_estimators": int(self.weights.shape[1]),
            "mean_max_weight": float(self.max_weight.mean()),
            "modal_argmax_share": self.modal_share,
            "distinct_argmax": self.distinct_argmax,
            "modal_argmax_share_top5": self.modal_share_top5,
            "distinct_argmax_top5": self.distinct_argmax_top5,
            "skewness": self.skewness,
            "kurtosis": self.kurtosis,
            "skewness_top5": self.skewness_top5,
            "kurtosis_top5": self.kurtosis_top5,
            "mean_internal_nodes": self.mean_internal_nodes,
            "mean_leaf_nodes": self.mean_leaf_nodes,
        }


def _argmax_stats(argmax):
    _, counts = np.unique(argmax, return_counts=True)
    return float(counts.max() / argmax.size), int(counts.size)


def top_fraction(max_weight, fraction: float = 0.05) -> np.ndarray:
    """Indices of the ``ceil(fraction * N)`` rows with the largest max weight."""
    k = max(1, math.ceil(fraction * len(max_weight)))
    return np.argsort(-max_weight, kind="stable")[:k]


def weight_report(params: EnsembleParameters, x, kind: str = "softsign") -> WeightReport:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if len(x) == 0:
        raise DataError("weight_report needs at least one row")
    w = estimator_weights(params, x, kind)
    argmax = w.argmax(axis=1)
    max_weight = w[np.arange(len(w)), argmax]
    top = top_fraction(max_weight)
    share, distinct = _argmax_stats(argmax)
    share_top, distinct_top = _argmax_stats(argmax[top])
    skew, kurt = moment_shape(w)

    sizes = {}
    for e in np.unique(argmax):
        pruned = prune_tree(params, int(e), x)
        sizes[int(e)] = (pruned.n_internal, pruned.n_leaves)
    internal = np.array([sizes[int(e)][0] for e in argmax], dtype=np.float64)
    leaves = np.array([sizes[int(e)][1] for e in argmax], dtype=np.float64)

    return WeightReport(
        w, argmax, max_weight, share, distinct, share_top, distinct_top,
        float(skew.mean()), float(kurt.mean()), float(skew[top].mean()), float(kurt[top].mean()),
        float(internal.mean()), float(leaves.mean()),
    )


def explain_instance(
    params: EnsembleParameters,
    x_row,
    k: int = 5,
    reference=None,
    preprocessor=None,
    kind: str = "softsign",
) -> dict:
    """Top-``k`` estimators by weight for one row plus its argmax tree.

    The argmax tree is pruned against ``reference`` (the row itself when no
    reference data is given) and rendered in raw units when a fitted
    preprocessor is supplied.
    """
    x_row = np.asarray(x_row, dtype=np.float64).reshape(1, -1)
    logit, trace = ensemble_forward(x_row, params, kind)
    w = trace.weights[0]
    order = np.argsort(-w, kind="stable")
    k = max(0, min(int(k), params.n_estimators))
    best = int(order[0])
    ref = x_row if reference is None else np.vstack([np.atleast_2d(reference), x_row])
    pruned = prune_tree(params, best, ref)
    names = preprocessor.feature_names if preprocessor is not None else None
    return {
        "logit": float(logit[0]),
        "probability": float(logistic(logit[0])),
        "top_estimators": [
            {"estimator": int(e), "weight": float(w[e]), "prediction": float(trace.tree_pred[0, e])} for e in order[:k]
        ],
        "argmax_estimator": best,
        "argmax_weight": float(w[best]),
        "tree": {"internal_nodes": pruned.n_internal, "leaf_nodes": pruned.n_leaves},
        "rules": render_tree(pruned, preprocessor, names),
    }
