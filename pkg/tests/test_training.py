import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from grande.exceptions import ConfigError, DataError, NumericalError
from grande.gradients import GradientSet
from grande.losses import batch_loss, focal_weighted_bce
from grande.model import init_parameters, predict_proba
from grande.training import (
    SWABuffer,
    TrainConfig,
    TrainState,
    adam_step,
    balanced_class_weights,
    draw_regularization_masks,
    dropout_mask,
    fit,
    lr_multiplier,
    stratified_split,
)

from conftest import xor_data

# -- loss ---------------------------------------------------------------------


def test_focal_loss_examples():
    loss, _ = focal_weighted_bce(0.0, 1, 1.0, 0.0)
    assert loss == pytest.approx(math.log(2), abs=1e-15)
    loss, _ = focal_weighted_bce(0.0, 1, 1.0, 3.0)
    assert loss == pytest.approx(0.125 * math.log(2), abs=1e-15)


def test_focal_gamma_zero_is_weighted_bce(rng):
    z = rng.uniform(-6, 6, 500)
    y = rng.integers(0, 2, 500)
    w = rng.uniform(0.2, 3, 500)
    p = 1 / (1 + np.exp(-z))
    ref = -w * (y * np.log(p) + (1 - y) * np.log(1 - p))
    loss, grad = focal_weighted_bce(z, y, w, 0.0)
    assert np.abs(loss - ref).max() < 1e-12
    assert np.abs(grad - w * (p - y)).max() < 1e-12


@pytest.mark.parametrize("gamma", [0.0, 0.5, 2.0, 5.0])
def test_focal_gradient_matches_central_difference(rng, gamma):
    z = rng.normal(0, 3, 50)
    y = rng.integers(0, 2, 50)
    h = 1e-6
    _, g = focal_weighted_bce(z, y, 1.3, gamma)
    fd = (focal_weighted_bce(z + h, y, 1.3, gamma)[0] - focal_weighted_bce(z - h, y, 1.3, gamma)[0]) / (2 * h)
    assert_allclose(g, fd, atol=1e-7)


def test_focal_loss_extreme_logits_finite():
    loss, grad = focal_weighted_bce(np.array([-800.0, 800.0]), np.array([1, 0]), 1.0, 2.0)
    assert np.isfinite(loss).all() and np.isfinite(grad).all()
    assert (loss > 0).all()


def test_focal_loss_bad_label():
    with pytest.raises(DataError):
        focal_weighted_bce(0.0, 2)


def test_batch_loss_is_mean():
    loss, grad = batch_loss(np.zeros(4), np.array([0, 1, 0, 1]))
    assert loss == pytest.approx(math.log(2))
    assert_allclose(grad, [0.125, -0.125, 0.125, -0.125])


# -- class weights --------------------------------------------------------------


def test_balanced_class_weights():
    assert balanced_class_weights([1, 0, 0, 0]) == pytest.approx((2 / 3, 2.0))
    assert balanced_class_weights([1, 0, 1, 0]) == (1.0, 1.0)
    assert balanced_class_weights([1, 1, 1, 0]) == pytest.approx((2.0, 2 / 3))
    with pytest.raises(DataError):
        balanced_class_weights([1, 1, 1])


# -- Adam -----------------------------------------------------------------------


def _setup_adam(rng):
    params = init_parameters(2, 2, 3, rng)
    lrs = {"index_logits": 0.02, "thresholds": 0.03, "leaf_values": 0.05, "leaf_weights": 0.005}
    return params, TrainState.for_params(params), lrs


def _grads_like(params, fill):
    return GradientSet(**{g: fill(a.shape) for g, a in params.arrays().items()})


def test_adam_first_step_moves_by_lr(rng):
    params, state, lrs = _setup_adam(rng)
    before = params.copy()
    adam_step(params, _grads_like(params, lambda s: rng.standard_normal(s)), state, lrs)
    for group, lr in lrs.items():
        assert_allclose(np.abs(getattr(params, group) - getattr(before, group)), lr, atol=1e-6)


def test_adam_zero_grad_leaves_params(rng):
    params, state, lrs = _setup_adam(rng)
    before = params.copy()
    adam_step(params, _grads_like(params, np.zeros), state, lrs)
    for group in lrs:
        assert_array_equal(getattr(params, group), getattr(before, group))


def test_adam_repeated_grad_does_not_grow(rng):
    params, state, lrs = _setup_adam(rng)
    g = _grads_like(params, lambda s: rng.standard_normal(s))
    p0 = params.copy()
    adam_step(params, g, state, lrs)
    p1 = params.copy()
    adam_step(params, g, state, lrs)
    for group in lrs:
        first = np.abs(getattr(p1, group) - getattr(p0, group))
        second = np.abs(getattr(params, group) - getattr(p1, group))
        assert (second <= first + 1e-12).all()


def test_adam_rejects_non_finite(rng):
    params, state, lrs = _setup_adam(rng)
    g = _grads_like(params, np.zeros)
    g.thresholds[0, 0, 0] = np.nan
    with pytest.raises(NumericalError):
        adam_step(params, g, state, lrs)


# -- schedule -------------------------------------------------------------------


def test_lr_multiplier():
    assert lr_multiplier(500, 0, 10, 1000) == 1.0
    assert lr_multiplier(5, 0, 10, 1000) == 0.5
    assert lr_multiplier(50, 100, 0, 1000) == pytest.approx(0.5)
    assert lr_multiplier(100, 100, 0, 1000) == 0.0
    assert lr_multiplier(5000, 100, 0, 1000) == 0.0
    # a fraction is relative to the total number of steps
    assert lr_multiplier(60, 0.1, 10, 1000) == pytest.approx(0.5)
    assert lr_multiplier(0, 0.1, 0, 1000) == 1.0


# -- SWA ------------------------------------------------------------------------


def test_swa_average(rng):
    p = init_parameters(1, 1, 1, rng)
    buf = SWABuffer(5)
    for v in (0.0, 2.0):
        q = p.copy()
        q.leaf_values[...] = v
        buf.update(q)
    assert_array_equal(buf.finalize(p).leaf_values, 1.0)


def test_swa_ring_keeps_last_five(rng):
    p = init_parameters(1, 1, 1, rng)
    buf = SWABuffer(5)
    for v in range(6):
        q = p.copy()
        q.leaf_values[...] = v
        buf.update(q)
    assert len(buf) == 5
    assert_array_equal(buf.finalize(p).leaf_values, 3.0)


def test_swa_identical_and_empty(rng):
    p = init_parameters(2, 2, 2, rng)
    buf = SWABuffer(5)
    assert_array_equal(buf.finalize(p).thresholds, p.thresholds)
    for _ in range(3):
        buf.update(p)
    assert_allclose(buf.finalize(p).thresholds, p.thresholds, atol=1e-15)


# -- masks ------------------------------------------------------------------------


def test_regularization_masks(rng):
    cfg = TrainConfig(n_estimators=50, selected_variables=0.8, data_fraction=0.85)
    feat, data = draw_regularization_masks(cfg, 10, 200, rng)
    assert (feat.sum(axis=1) == 8).all()
    assert (data.sum(axis=1) == 170).all()
    cfg = TrainConfig(n_estimators=5, selected_variables=1.0, data_fraction=1.0)
    feat, data = draw_regularization_masks(cfg, 7, 30, rng)
    assert feat.all() and data.all()


def test_dropout_mask(rng):
    assert dropout_mask(8, 0.0, rng).all()
    active = dropout_mask(4, 0.5, rng)
    assert (~active).sum() == 2
    assert (~dropout_mask(1024, 0.25, rng)).sum() == 256
    with pytest.raises(ConfigError):
        dropout_mask(2, 0.75, rng)


def test_stratified_split(rng):
    y = np.array([0] * 80 + [1] * 20)
    train, hold = stratified_split(y, 0.2, rng)
    assert (y[hold] == 1).sum() == 4 and (y[hold] == 0).sum() == 16
    assert np.intersect1d(train, hold).size == 0 and train.size + hold.size == 100


# -- config ---------------------------------------------------------------------------


def test_config_round_trip_and_validation():
    cfg = TrainConfig(depth=3, seed=9)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"no_such_key": 1})
    for bad in ({"depth": 0}, {"n_estimators": 0}, {"dropout": 1.0}, {"split_kind": "relu"},
                {"batch_size": 0}, {"weighting": "tree"}):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


# -- fit ----------------------------------------------------------------------------


def test_fit_linearly_separable():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (200, 2))
    x[:, 0] += np.where(x[:, 0] >= 0, 0.2, -0.2)
    y = (x[:, 0] > 0).astype(int)
    params, history = fit(x, y, config=TrainConfig(n_estimators=64, max_epochs=50))
    assert len(history) <= 50
    assert ((predict_proba(x, params) >= 0.5) == y).mean() >= 0.99


@pytest.mark.slow
def test_fit_xor():
    x, y = xor_data(3)
    params, _ = fit(x[:320], y[:320], config=TrainConfig(n_estimators=256, max_epochs=60, seed=3))
    assert ((predict_proba(x[320:], params) >= 0.5) == y[320:]).mean() >= 0.95


def test_fit_zero_epochs_returns_init():
    x, y = xor_data(0, n=60)
    cfg = TrainConfig(n_estimators=8, depth=2, max_epochs=0, seed=4)
    params, history = fit(x, y, config=cfg)
    again, _ = fit(x, y, config=cfg)
    assert history == []
    assert not params.leaf_values.any()
    assert_array_equal(params.thresholds, again.thresholds)


def test_fit_is_deterministic():
    x, y = xor_data(1, n=120)
    cfg = TrainConfig(n_estimators=16, depth=2, max_epochs=5, seed=11, dropout=0.25)
    a, ha = fit(x, y, config=cfg)
    b, hb = fit(x, y, config=cfg)
    assert ha == hb
    for group in a.GROUPS:
        assert_array_equal(getattr(a, group), getattr(b, group))
    c, _ = fit(x, y, config=TrainConfig(**{**cfg.to_dict(), "seed": 12}))
    assert not np.array_equal(a.thresholds, c.thresholds)


def test_fit_history_and_validation_split():
    x, y = xor_data(2, n=120)
    _, history = fit(x[:100], y[:100], x[100:], y[100:], TrainConfig(n_estimators=8, depth=2, max_epochs=3))
    assert [h["epoch"] for h in history] == [0, 1, 2]
    assert all(set(h) == {"epoch", "train_loss", "valid_loss", "valid_macro_f1"} for h in history)


def test_fit_rejects_bad_input():
    with pytest.raises(DataError):
        fit(np.zeros((10, 2)), np.ones(10, dtype=int), config=TrainConfig(max_epochs=1))
    with pytest.raises(DataError):
        fit(np.zeros((10, 2)), np.zeros(9, dtype=int))
