"""Dense tree-ensemble representation and the hard forward pass.

Every tree is a complete binary tree of depth ``d`` whose internal nodes are
enumerated breadth-first: node ``m`` has children ``2m + 1`` (taken when the
hard split is 1) and ``2m + 2`` (taken when the hard split is 0).  Leaves are
numbered ``0 .. 2**d - 1`` so that the bits of a leaf index, read from the
most significant end, are the branch sides along its path.

Arrays are laid out as

    index_logits  (E, M, n)   M = 2**d - 1 internal nodes
    thresholds    (E, M, n)
    leaf_values   (E, L)      L = 2**d leaves
    leaf_weights  (E, L)
    feature_masks (E, n)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, ModelError

MASK_SENTINEL = -1e9
MAX_DEPTH = 12
SPLIT_KINDS = ("softsign", "entmoid", "sigmoid")


# ---------------------------------------------------------------------------
# Path table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathTable:
    """Internal node ``node_index[l, j]`` and branch side ``branch_side[l, j]``
    met by leaf ``l`` at depth ``j + 1``."""

    depth: int
    node_index: np.ndarray
    branch_side: np.ndarray

    @property
    def n_leaves(self) -> int:
        return 1 << self.depth

    @property
    def n_internal(self) -> int:
        return (1 << self.depth) - 1


def build_path_table(depth: int) -> PathTable:
    if not isinstance(depth, (int, np.integer)) or not 1 <= depth <= MAX_DEPTH:
        raise ConfigError(f"depth must be an integer in [1, {MAX_DEPTH}], got {depth!r}")
    depth = int(depth)
    leaves = np.arange(1 << depth)[:, None]
    levels = np.arange(1, depth + 1)[None, :]
    node_index = (1 << (levels - 1)) - 1 + (leaves >> (depth - levels + 1))
    branch_side = (leaves >> (depth - levels)) & 1
    node_index.setflags(write=False)
    branch_side.setflags(write=False)
    return PathTable(depth, node_index, branch_side)


# ---------------------------------------------------------------------------
# Split surrogates
# ---------------------------------------------------------------------------


def _softsign(z):
    a = 1.0 + np.abs(z)
    return 0.5 * (z / a + 1.0), 0.5 / (a * a)


def _sigmoid(z):
    s = np.empty_like(z)
    pos = z >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    s[~pos] = ez / (1.0 + ez)
    return s, s * (1.0 - s)


def _entmoid(z):
    # two-class entmax-1.5 of [z, 0]; saturates for |z| >= 2
    a = np.abs(z)
    inside = a < 2.0
    root = np.sqrt(np.clip(8.0 - a * a, 0.0, None))
    gap = np.where(inside, 0.5 * (root - a), 0.0)
    tail = gap * gap / 4.0
    dgap = np.where(inside, 0.5 * (-a / np.where(inside, root, 1.0) - 1.0), 0.0)
    value = np.where(z >= 0, 1.0 - tail, tail)
    value = np.where(z == 0, 0.5, value)
    return value, np.where(inside, -0.5 * gap * dgap, 0.0)


_SURROGATES = {"softsign": _softsign, "entmoid": _entmoid, "sigmoid": _sigmoid}


def split_surrogate(z, kind: str = "softsign"):
    """Return ``(value, derivative)`` of the soft split function at ``z``.

    ``value`` lies in [0, 1] and equals 0.5 at ``z = 0`` for every kind.
    """
    try:
        fn = _SURROGATES[kind]
    except KeyError:
        raise ConfigError(f"unknown split kind {kind!r}; expected one of {SPLIT_KINDS}") from None
    z = np.asarray(z, dtype=np.float64)
    value, deriv = fn(np.atleast_1d(z))
    if z.ndim == 0:
        return float(value[0]), float(deriv[0])
    return value, deriv


def hardmax_st(logits) -> np.ndarray:
    """One-hot of the largest logit, lowest index on ties.

    The backward pass treats this as the identity (straight-through).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0 or np.all(logits <= MASK_SENTINEL):
        raise ModelError("hardmax over an empty or fully masked logit vector")
    out = np.zeros_like(logits)
    out[np.argmax(logits)] = 1.0
    return out


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass
class EnsembleParameters:
    index_logits: np.ndarray
    thresholds: np.ndarray
    leaf_values: np.ndarray
    leaf_weights: np.ndarray
    feature_masks: np.ndarray
    depth: int = field(init=False)

    def __post_init__(self):
        E, M, n = self.index_logits.shape
        depth = int(np.log2(M + 1))
        if (1 << depth) - 1 != M:
            raise ModelError(f"index_logits has {M} nodes, not 2**d - 1")
        self.depth = depth
        expected = {
            "thresholds": (E, M, n),
            "leaf_values": (E, M + 1),
            "leaf_weights": (E, M + 1),
            "feature_masks": (E, n),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ModelError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not self.feature_masks.any(axis=1).all():
            raise ModelError("every tree needs at least one unmasked feature")

    @property
    def n_estimators(self) -> int:
        return self.index_logits.shape[0]

    @property
    def n_features(self) -> int:
        return self.index_logits.shape[2]

    @property
    def n_internal(self) -> int:
        return self.index_logits.shape[1]

    @property
    def n_leaves(self) -> int:
        return self.leaf_values.shape[1]

    GROUPS = ("index_logits", "thresholds", "leaf_values", "leaf_weights")

    def arrays(self) -> dict:
        return {g: getattr(self, g) for g in self.GROUPS}

    def copy(self) -> "EnsembleParameters":
        return EnsembleParameters(
            self.index_logits.copy(),
            self.thresholds.copy(),
            self.leaf_values.copy(),
            self.leaf_weights.copy(),
            self.feature_masks.copy(),
        )

    def pin_masked(self) -> None:
        self.index_logits[~np.broadcast_to(self.feature_masks[:, None, :], self.index_logits.shape)] = MASK_SENTINEL

    def selected_features(self) -> np.ndarray:
        """Hardmax feature index per node, shape (E, M)."""
        return np.argmax(self.index_logits, axis=2)

    def selected_thresholds(self, selected=None) -> np.ndarray:
        if selected is None:
            selected = self.selected_features()
        return np.take_along_axis(self.thresholds, selected[..., None], axis=2)[..., 0]

    def is_finite(self) -> bool:
        return all(bool(np.isfinite(a).all()) for a in self.arrays().values())


def init_parameters(
    n_estimators: int,
    depth: int,
    n_features: int,
    rng: np.random.Generator,
    feature_masks: np.ndarray | None = None,
) -> EnsembleParameters:
    """Thresholds ~ N(0, 1), index logits ~ U(-0.1, 0.1), leaves and weights 0."""
    build_path_table(depth)
    if n_estimators < 1 or n_features < 1:
        raise ConfigError("n_estimators and n_features must be positive")
    M = (1 << depth) - 1
    index_logits = rng.uniform(-0.1, 0.1, size=(n_estimators, M, n_features))
    thresholds = rng.standard_normal((n_estimators, M, n_features))
    if feature_masks is None:
        feature_masks = np.ones((n_estimators, n_features), dtype=bool)
    params = EnsembleParameters(
        index_logits,
        thresholds,
        np.zeros((n_estimators, M + 1)),
        np.zeros((n_estimators, M + 1)),
        np.asarray(feature_masks, dtype=bool),
    )
    params.pin_masked()
    return params


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


@dataclass
class ForwardTrace:
    """Quantities cached by :func:`ensemble_forward` for the backward pass.

    Shapes use B samples, E trees, M internal nodes, d depth.
    """

    x: np.ndarray  # (B, n)
    selected: np.ndarray  # (E, M) feature index per node
    z: np.ndarray  # (B, E, M) pre-activation x_f - tau_f
    soft: np.ndarray  # (B, E, d) surrogate values at the path nodes
    dsoft: np.ndarray  # (B, E, d) surrogate derivatives at the path nodes
    hard: np.ndarray  # (B, E, M) bool split bits
    path_nodes: np.ndarray  # (B, E, d)
    leaf: np.ndarray  # (B, E)
    tree_pred: np.ndarray  # (B, E)
    raw_weight: np.ndarray  # (B, E)
    weights: np.ndarray  # (B, E) post-softmax
    active: np.ndarray  # (E,) bool, trees not dropped out
    logit: np.ndarray  # (B,)

    @property
    def membership(self) -> np.ndarray:
        """One-hot leaf membership (B, E, L)."""
        B, E = self.leaf.shape
        depth = self.path_nodes.shape[2]
        out = np.zeros((B, E, 1 << depth))
        np.put_along_axis(out, self.leaf[..., None], 1.0, axis=2)
        return out


def _route(hard: np.ndarray, depth: int):
    B, E, M = hard.shape
    flat = hard.reshape(-1)
    base = np.arange(B * E).reshape(B, E) * M
    node = np.zeros((B, E), dtype=np.int64)
    path = np.empty((B, E, depth), dtype=np.int64)
    for j in range(depth):
        path[..., j] = node
        node = 2 * node + 1 + ~flat[base + node]
    return path, node - M


def masked_softmax(raw: np.ndarray, active: np.ndarray) -> np.ndarray:
    if not active.any():
        raise ConfigError("all trees are deactivated")
    shifted = np.where(active, raw, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def ensemble_forward(
    x: np.ndarray,
    params: EnsembleParameters,
    kind: str = "softsign",
    active: np.ndarray | None = None,
):
    """Hard forward pass over a batch ``x`` of shape (B, n).

    Returns the ensemble logits (B,) and a :class:`ForwardTrace`.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.n_features:
        raise ModelError(f"input has {x.shape[1]} features, model expects {params.n_features}")
    E = params.n_estimators
    if active is None:
        active = np.ones(E, dtype=bool)
    selected = params.selected_features()
    tau = params.selected_thresholds(selected)
    z = x[:, selected] - tau[None]
    # round-half-up of the surrogate; every surrogate crosses 0.5 at z = 0
    hard = z >= 0
    path, leaf = _route(hard, params.depth)
    soft, dsoft = split_surrogate(np.take_along_axis(z, path, axis=2), kind)
    rows = np.arange(E)[None, :]
    tree_pred = params.leaf_values[rows, leaf]
    raw = params.leaf_weights[rows, leaf]
    weights = masked_softmax(raw, active)
    logit = np.einsum("be,be->b", weights, tree_pred)
    trace = ForwardTrace(x, selected, z, soft, dsoft, hard, path, leaf, tree_pred, raw, weights, active, logit)
    return logit, trace


def logistic(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def predict_proba(x: np.ndarray, params: EnsembleParameters, kind: str = "softsign", batch_size: int = 4096) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = np.empty(len(x))
    for start in range(0, len(x), batch_size):
        logit, _ = ensemble_forward(x[start : start + batch_size], params, kind)
        out[start : start + batch_size] = logistic(logit)
    return out


def instance_weights(x: np.ndarray, params: EnsembleParameters, active: np.ndarray | None = None) -> np.ndarray:
    """Post-softmax per-tree weights, shape (B, E)."""
    _, trace = ensemble_forward(x, params, active=active)
    return trace.weights


# ---------------------------------------------------------------------------
# Single-sample helpers
# ---------------------------------------------------------------------------


def node_split(x, node_index_logits, node_thresholds, kind: str = "softsign"):
    """Hard bit and soft value of one axis-aligned split."""
    iota = hardmax_st(node_index_logits)
    x = np.asarray(x, dtype=np.float64)
    z = float(iota @ x - iota @ np.asarray(node_thresholds, dtype=np.float64))
    soft, _ = split_surrogate(z, kind)
    return int(z >= 0), soft


def leaf_indicator(split_values, table: PathTable) -> np.ndarray:
    """Leaf membership from per-node split values (hard bits or soft values).

    ``split_values`` has length ``2**d - 1``; no rounding is applied here.
    """
    s = np.asarray(split_values, dtype=np.float64)[table.node_index]
    p = table.branch_side
    return np.prod((1 - p) * s + p * (1 - s), axis=1)


def tree_split_values(x, params: EnsembleParameters, tree: int, kind: str = "softsign", hard: bool = True):
    x = np.asarray(x, dtype=np.float64)
    sel = params.selected_features()[tree]
    z = x[sel] - params.thresholds[tree, np.arange(params.n_internal), sel]
    if hard:
        return (z >= 0).astype(np.float64)
    return split_surrogate(z, kind)[0]


def tree_predict(x, params: EnsembleParameters, tree: int, table: PathTable | None = None) -> float:
    if table is None:
        table = build_path_table(params.depth)
    membership = leaf_indicator(tree_split_values(x, params, tree), table)
    return float(params.leaf_values[tree] @ membership)
