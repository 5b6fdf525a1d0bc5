import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from grande.exceptions import ConfigError
from grande.gradients import backward_batch, dense_backward, fd_check, soft_forward
from grande.losses import batch_loss
from grande.model import EnsembleParameters, ensemble_forward, init_parameters

from conftest import random_params

GROUPS = EnsembleParameters.GROUPS


def _grads(params, x, y, **kw):
    logit, trace = ensemble_forward(x, params)
    _, dlogit = batch_loss(logit, y)
    return backward_batch(params, trace, dlogit, **kw)


def test_single_depth_one_tree(rng):
    params = random_params(rng, E=1, depth=1, n=2)
    for row in rng.standard_normal((6, 1, 2)):
        _, trace = ensemble_forward(row, params)
        g = backward_batch(params, trace, np.ones(1))
        assert_array_equal(g.leaf_values[0], trace.membership[0, 0])
        assert_array_equal(g.leaf_weights, 0.0)


def test_zero_loss_grads_give_zero(rng):
    params = random_params(rng)
    _, trace = ensemble_forward(rng.standard_normal((16, 5)), params)
    g = backward_batch(params, trace, np.zeros(16))
    for a in g.arrays().values():
        assert not a.any()


def test_duplicate_sample_doubles(rng):
    params = random_params(rng)
    x = rng.standard_normal((1, 5))
    _, t1 = ensemble_forward(x, params)
    _, t2 = ensemble_forward(np.vstack([x, x]), params)
    g1 = backward_batch(params, t1, np.array([0.7]))
    g2 = backward_batch(params, t2, np.array([0.7, 0.7]))
    for group in GROUPS:
        assert_allclose(getattr(g2, group), 2 * getattr(g1, group), rtol=1e-14, atol=0)


def test_loss_scaling_is_linear(rng):
    params = random_params(rng)
    x = rng.standard_normal((16, 5))
    _, trace = ensemble_forward(x, params)
    d = rng.standard_normal(16)
    g1, g3 = backward_batch(params, trace, d), backward_batch(params, trace, 3 * d)
    for group in GROUPS:
        assert_allclose(getattr(g3, group), 3 * getattr(g1, group), rtol=1e-12, atol=1e-15)


def test_estimator_permutation_equivariance(rng):
    params = random_params(rng, E=5)
    perm = rng.permutation(5)
    permuted = EnsembleParameters(*(a[perm] for a in (
        params.index_logits, params.thresholds, params.leaf_values, params.leaf_weights, params.feature_masks)))
    x = rng.standard_normal((16, 5))
    y = rng.integers(0, 2, 16)
    g, gp = _grads(params, x, y), _grads(permuted, x, y)
    for group in GROUPS:
        assert_allclose(getattr(gp, group), getattr(g, group)[perm], atol=1e-14)


def test_sample_mask_zeroes_tree(rng):
    params = random_params(rng, E=3)
    x = rng.standard_normal((16, 5))
    logit, trace = ensemble_forward(x, params)
    mask = np.ones((16, 3), dtype=bool)
    mask[:, 1] = False
    g = backward_batch(params, trace, rng.standard_normal(16), sample_mask=mask)
    for group in GROUPS:
        assert not getattr(g, group)[1].any()


@pytest.mark.parametrize("weighting", ["leaf", "estimator"])
@pytest.mark.parametrize("kind", ["softsign", "sigmoid", "entmoid"])
def test_fast_backward_matches_dense(rng, kind, weighting):
    params = random_params(rng, E=6, depth=3, n=4)
    params.feature_masks[2, 0] = False
    params.pin_masked()
    x = rng.standard_normal((20, 4))
    y = rng.integers(0, 2, 20)
    active = np.array([True, False, True, True, True, True])
    logit, trace = ensemble_forward(x, params, kind, active)
    hard_logit, cache = soft_forward(x, params, kind, active=active, hard=True)
    assert_allclose(hard_logit, logit, atol=1e-14)
    _, d = batch_loss(logit, y)
    fast = backward_batch(params, trace, d, weighting=weighting)
    dense = dense_backward(params, cache, d, weighting=weighting)
    for group in GROUPS:
        assert_allclose(getattr(fast, group), getattr(dense, group), atol=1e-13)
    assert not fast.index_logits[2, :, 0].any()
    assert not fast.leaf_values[1].any()


def test_estimator_weighting_ties_leaf_gradients(rng):
    params = random_params(rng, E=4)
    g = _grads(params, rng.standard_normal((16, 5)), rng.integers(0, 2, 16), weighting="estimator")
    assert_allclose(g.leaf_weights, np.repeat(g.leaf_weights[:, :1], g.leaf_weights.shape[1], axis=1))


@pytest.mark.parametrize("kind", ["softsign", "sigmoid", "entmoid"])
@pytest.mark.parametrize("seed", range(20))
def test_fd_check(seed, kind):
    rng = np.random.default_rng(seed)
    params = random_params(rng)
    x = rng.standard_normal((16, 5))
    y = rng.integers(0, 2, 16)
    report = fd_check(params, x, y, 1e-5, kind=kind, class_weights=(0.8, 1.4), gamma=1.5)
    assert max(report.values()) < 1e-4, report


def test_fd_check_rejects_bad_epsilon(rng):
    params = init_parameters(1, 1, 1, rng)
    with pytest.raises(ConfigError):
        fd_check(params, np.zeros((1, 1)), np.zeros(1, dtype=int), 0.0)
