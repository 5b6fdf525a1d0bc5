"""Optimisation machinery: configuration, Adam, schedule, SWA and the fit loop."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .exceptions import ConfigError, DataError, NumericalError
from .gradients import GradientSet, backward_batch
from .losses import batch_loss, focal_weighted_bce
from .metrics import macro_f1
from .model import SPLIT_KINDS, EnsembleParameters, ensemble_forward, init_parameters, logistic

__all__ = [
    "TrainConfig",
    "TrainState",
    "SWABuffer",
    "focal_weighted_bce",
    "balanced_class_weights",
    "adam_step",
    "lr_multiplier",
    "draw_regularization_masks",
    "dropout_mask",
    "stratified_split",
    "fit",
]

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    depth: int = 5
    n_estimators: int = 1024
    lr_weights: float = 0.005
    lr_index: float = 0.02
    lr_values: float = 0.02
    lr_leaf: float = 0.05
    dropout: float = 0.0
    selected_variables: float = 0.8
    data_fraction: float = 0.85
    focal_factor: float = 0.0
    cosine_decay_steps: float = 0.0
    warmup_steps: int = 0
    batch_size: int = 64
    early_stopping_patience: int = 25
    max_epochs: int = 250
    swa_checkpoints: int = 5
    seed: int = 0
    split_kind: str = "softsign"
    use_class_weights: bool = True
    weighting: str = "leaf"
    validation_fraction: float = 0.2

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("selected_variables", "data_fraction", "validation_fraction"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ConfigError(f"{name} must be in (0, 1], got {value}")
        if self.validation_fraction >= 1:
            raise ConfigError("validation_fraction must be below 1")
        for name in ("lr_weights", "lr_index", "lr_values", "lr_leaf"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        if self.focal_factor < 0:
            raise ConfigError("focal_factor must be non-negative")
        if self.cosine_decay_steps < 0 or self.warmup_steps < 0:
            raise ConfigError("schedule steps must be non-negative")
        for name in ("batch_size", "swa_checkpoints", "n_estimators"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.max_epochs < 0 or self.early_stopping_patience < 1:
            raise ConfigError("max_epochs must be >= 0 and early_stopping_patience >= 1")
        if self.split_kind not in SPLIT_KINDS:
            raise ConfigError(f"split_kind must be one of {SPLIT_KINDS}")
        if self.weighting not in ("leaf", "estimator"):
            raise ConfigError("weighting must be 'leaf' or 'estimator'")
        if not 1 <= self.depth <= 12:
            raise ConfigError("depth must be in [1, 12]")

    @property
    def learning_rates(self) -> dict:
        return {
            "index_logits": self.lr_index,
            "thresholds": self.lr_values,
            "leaf_values": self.lr_leaf,
            "leaf_weights": self.lr_weights,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    first_moment: dict
    second_moment: dict
    step: int = 0
    best_valid: float = math.inf
    epochs_since_best: int = 0
    best_epoch: int = -1

    @classmethod
    def for_params(cls, params: EnsembleParameters) -> "TrainState":
        arrays = params.arrays()
        return cls({g: np.zeros_like(a) for g, a in arrays.items()}, {g: np.zeros_like(a) for g, a in arrays.items()})


# ---------------------------------------------------------------------------
# Loss weighting
# ---------------------------------------------------------------------------


def balanced_class_weights(labels):
    """``(w0, w1)`` with ``w_c = N / (2 N_c)``."""
    labels = np.asarray(labels)
    n1 = int(np.sum(labels == 1))
    n0 = int(np.sum(labels == 0))
    if n0 + n1 != labels.size:
        raise DataError("labels must be 0/1")
    if n0 == 0 or n1 == 0:
        raise DataError("training labels contain a single class")
    n = labels.size
    return n / (2.0 * n0), n / (2.0 * n1)


# ---------------------------------------------------------------------------
# Optimiser and schedule
# ---------------------------------------------------------------------------


def adam_step(params: EnsembleParameters, grads: GradientSet, state: TrainState, lrs: dict, multiplier: float = 1.0):
    """One in-place Adam update with a separate learning rate per group.

    ``state.step`` is incremented before the bias correction, so the first
    call uses step 1.
    """
    if not grads.is_finite():
        bad = [g for g, a in grads.arrays().items() if not np.isfinite(a).all()]
        raise NumericalError(f"non-finite gradients in {', '.join(bad)} at step {state.step + 1}")
    state.step += 1
    t = state.step
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for group, g in grads.arrays().items():
        m = state.first_moment[group]
        v = state.second_moment[group]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        step = lrs[group] * multiplier * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        getattr(params, group)[...] -= step
    params.pin_masked()


def decay_horizon(cosine_decay_steps: float, total_steps: int) -> int:
    """Number of cosine-decay steps; 0 means decay disabled."""
    if cosine_decay_steps >= 1:
        return int(cosine_decay_steps)
    if cosine_decay_steps > 0:
        return max(1, int(round(cosine_decay_steps * total_steps)))
    return 0


def lr_multiplier(step: int, cosine_decay_steps: float = 0.0, warmup_steps: int = 0, total_steps: int = 0) -> float:
    """Linear warmup to 1, then half-cosine decay to 0 over the horizon."""
    if step < 0:
        raise ConfigError("step must be non-negative")
    if warmup_steps > 0 and step < warmup_steps:
        return step / warmup_steps
    horizon = decay_horizon(cosine_decay_steps, total_steps)
    if horizon == 0:
        return 1.0
    t = min(step - warmup_steps, horizon)
    return max(0.0, 0.5 * (1.0 + math.cos(math.pi * t / horizon)))


class SWABuffer:
    """Ring of the most recent parameter snapshots."""

    def __init__(self, size: int = 5):
        self.snapshots: deque = deque(maxlen=size)

    def __len__(self):
        return len(self.snapshots)

    def update(self, params: EnsembleParameters) -> None:
        self.snapshots.append(params.copy())

    def finalize(self, current: EnsembleParameters) -> EnsembleParameters:
        if not self.snapshots:
            logger.warning("no SWA snapshots captured; returning current parameters")
            return current.copy()
        out = self.snapshots[-1].copy()
        for group in EnsembleParameters.GROUPS:
            stacked = np.stack([getattr(s, group) for s in self.snapshots])
            getattr(out, group)[...] = stacked.mean(axis=0)
        out.pin_masked()
        return out


# ---------------------------------------------------------------------------
# Regularisation masks
# ---------------------------------------------------------------------------


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def draw_regularization_masks(config: TrainConfig, n_features: int, n_train: int, rng: np.random.Generator):
    """Per-tree feature subsets (E, n) and data subsets (E, n_train)."""
    E = config.n_estimators
    k_feat = min(n_features, max(1, _round_half_up(config.selected_variables * n_features)))
    k_data = min(n_train, max(1, _round_half_up(config.data_fraction * n_train)))
    feature_masks = np.zeros((E, n_features), dtype=bool)
    data_masks = np.zeros((E, n_train), dtype=bool)
    for e in range(E):
        feature_masks[e, rng.choice(n_features, k_feat, replace=False)] = True
        data_masks[e, rng.choice(n_train, k_data, replace=False)] = True
    return feature_masks, data_masks


def dropout_mask(n_estimators: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean activity vector with exactly ``round(rate * E)`` trees off."""
    if not 0 <= rate < 1:
        raise ConfigError("dropout rate must be in [0, 1)")
    k = _round_half_up(rate * n_estimators)
    if k >= n_estimators:
        raise ConfigError(f"dropout {rate} would deactivate all {n_estimators} trees")
    active = np.ones(n_estimators, dtype=bool)
    if k:
        active[rng.choice(n_estimators, k, replace=False)] = False
    return active


def stratified_split(labels, fraction: float, rng: np.random.Generator):
    """Indices ``(train, holdout)`` with ``fraction`` of each class held out."""
    labels = np.asarray(labels)
    holdout = []
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        k = _round_half_up(fraction * idx.size)
        if idx.size > 1:
            k = min(max(k, 1), idx.size - 1)
        else:
            k = 0
        holdout.append(idx[:k])
    holdout = np.sort(np.concatenate(holdout))
    train = np.setdiff1d(np.arange(labels.size), holdout)
    return train, holdout


# ---------------------------------------------------------------------------
# Fit loop
# ---------------------------------------------------------------------------


def _evaluate(params, x, y, config, class_weights):
    logits = np.concatenate(
        [ensemble_forward(x[i : i + 4096], params, config.split_kind)[0] for i in range(0, len(x), 4096)]
    )
    loss, _ = batch_loss(logits, y, class_weights, config.focal_factor)
    return loss, macro_f1(y, (logistic(logits) >= 0.5).astype(np.int64))


def fit(x_train, y_train, x_valid=None, y_valid=None, config: TrainConfig | None = None):
    """Train an ensemble on a preprocessed numeric matrix.

    Returns ``(params, history)`` where ``params`` is the average of the
    last ``config.swa_checkpoints`` snapshots taken at validation-loss
    improvements and ``history`` is a list of per-epoch dicts.
    """
    config = config or TrainConfig()
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train).astype(np.int64)
    if x_train.ndim != 2 or len(x_train) != len(y_train):
        raise DataError("x_train must be 2-D with one label per row")
    rng = np.random.default_rng(config.seed)
    if x_valid is None:
        tr, va = stratified_split(y_train, config.validation_fraction, rng)
        x_train, x_valid, y_train, y_valid = x_train[tr], x_train[va], y_train[tr], y_train[va]
    else:
        x_valid = np.asarray(x_valid, dtype=np.float64)
        y_valid = np.asarray(y_valid).astype(np.int64)

    # also rejects single-class training data
    class_weights = balanced_class_weights(y_train)
    if not config.use_class_weights:
        class_weights = (1.0, 1.0)
    n_train, n_features = x_train.shape
    feature_masks, data_masks = draw_regularization_masks(config, n_features, n_train, rng)
    params = init_parameters(config.n_estimators, config.depth, n_features, rng, feature_masks)
    history: list = []
    if config.max_epochs == 0:
        return params, history

    state = TrainState.for_params(params)
    swa = SWABuffer(config.swa_checkpoints)
    lrs = config.learning_rates
    batches_per_epoch = math.ceil(n_train / config.batch_size)
    total_steps = config.max_epochs * batches_per_epoch
    E = config.n_estimators

    for epoch in range(config.max_epochs):
        order = rng.permutation(n_train)
        batch_losses = []
        for b in range(batches_per_epoch):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            active = dropout_mask(E, config.dropout, rng)
            logit, trace = ensemble_forward(x_train[idx], params, config.split_kind, active)
            loss, dlogit = batch_loss(logit, y_train[idx], class_weights, config.focal_factor)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss in epoch {epoch}, batch {b}")
            grads = backward_batch(params, trace, dlogit, data_masks[:, idx].T, config.weighting)
            mult = lr_multiplier(state.step + 1, config.cosine_decay_steps, config.warmup_steps, total_steps)
            adam_step(params, grads, state, lrs, mult)
            batch_losses.append(loss)

        valid_loss, valid_f1 = _evaluate(params, x_valid, y_valid, config, class_weights)
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(batch_losses)),
                "valid_loss": valid_loss,
                "valid_macro_f1": valid_f1,
            }
        )
        if valid_loss < state.best_valid:
            state.best_valid = valid_loss
            state.best_epoch = epoch
            state.epochs_since_best = 0
            swa.update(params)
        else:
            state.epochs_since_best += 1
            if state.epochs_since_best >= config.early_stopping_patience:
                logger.info("early stopping after epoch %d (best %d)", epoch, state.best_epoch)
                break

    return swa.finalize(params), history
