import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from grande.explain import (
    Leaf,
    estimator_weights,
    explain_instance,
    moment_shape,
    prune_tree,
    render_tree,
    top_fraction,
    weight_report,
)
from grande.model import ensemble_forward, init_parameters

from conftest import random_params


def test_moment_shape_examples():
    skew, kurt = moment_shape([0.0, 0.0, 0.0, 1.0])
    assert skew == pytest.approx(1.1547005383792515, abs=1e-12)
    assert kurt == pytest.approx(-2 / 3, abs=1e-12)
    skew, _ = moment_shape([1.0, 2.0, 3.0, 4.0])
    assert abs(skew) < 1e-15
    assert [float(v) for v in moment_shape([0.2, 0.2, 0.2])] == [0.0, 0.0]


def test_moment_shape_matches_scipy(rng):
    from scipy import stats

    v = rng.exponential(size=(20, 50))
    skew, kurt = moment_shape(v)
    assert_allclose(skew, stats.skew(v, axis=1), atol=1e-12)
    assert_allclose(kurt, stats.kurtosis(v, axis=1), atol=1e-12)


def test_prune_preserves_predictions(rng):
    for _ in range(30):
        params = random_params(rng, E=2, depth=4, n=3)
        params.leaf_values[...] = rng.integers(0, 3, params.leaf_values.shape)
        x = rng.standard_normal((60, 3))
        _, trace = ensemble_forward(x, params)
        for e in range(2):
            tree = prune_tree(params, e, x)
            assert_array_equal(tree.predict(x), trace.tree_pred[:, e])
            assert tree.n_leaves == tree.n_internal + 1
            assert tree.n_internal <= params.n_internal


def test_prune_collapses_equal_leaves(rng):
    params = init_parameters(1, 1, 1, rng)
    params.thresholds[...] = 0.0
    params.leaf_values[0] = [1.5, 1.5]
    tree = prune_tree(params, 0, np.array([[-1.0], [1.0]]))
    assert isinstance(tree, Leaf) and tree.value == 1.5


def test_prune_keeps_full_tree_when_all_leaves_reached(rng):
    params = init_parameters(1, 2, 2, rng)
    params.index_logits[0] = [[1, 0], [0, 1], [0, 1]]
    params.thresholds[...] = 0.0
    params.leaf_values[0] = [1.0, 2.0, 3.0, 4.0]
    x = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
    tree = prune_tree(params, 0, x)
    assert tree.n_internal == 3 and tree.n_leaves == 4
    text = render_tree(tree, feature_names=["a", "b"])
    assert text.splitlines()[0] == "if a >= 0:"


def test_prune_drops_unreached_branch(rng):
    params = init_parameters(1, 2, 2, rng)
    params.index_logits[0] = [[1, 0], [0, 1], [0, 1]]
    params.thresholds[...] = 0.0
    params.leaf_values[0] = [1.0, 2.0, 3.0, 4.0]
    tree = prune_tree(params, 0, np.array([[1.0, 1.0], [2.0, -1.0]]))
    assert tree.n_internal == 1 and tree.feature == 1


def test_single_tree_report_and_explanation(rng):
    params = random_params(rng, E=1, depth=2, n=3)
    x = rng.standard_normal((30, 3))
    report = weight_report(params, x)
    assert report.modal_share == 1.0 and report.distinct_argmax == 1
    assert_array_equal(report.max_weight, 1.0)
    out = explain_instance(params, x[0], k=5, reference=x)
    assert out["argmax_weight"] == 1.0
    assert [t["estimator"] for t in out["top_estimators"]] == [0]


def test_explain_k_clamping(rng):
    params = random_params(rng, E=6, depth=3, n=4)
    x = rng.standard_normal((20, 4))
    none = explain_instance(params, x[3], k=0, reference=x)
    assert none["top_estimators"] == [] and none["rules"]
    many = explain_instance(params, x[3], k=50)
    weights = [t["weight"] for t in many["top_estimators"]]
    assert len(weights) == 6 and weights == sorted(weights, reverse=True)
    assert many["argmax_estimator"] == int(estimator_weights(params, x[3:4])[0].argmax())
    assert sum(t["weight"] * t["prediction"] for t in many["top_estimators"]) == pytest.approx(many["logit"])


def test_weight_report_statistics(rng):
    params = random_params(rng, E=8, depth=3, n=4)
    x = rng.standard_normal((100, 4))
    report = weight_report(params, x)
    w = estimator_weights(params, x)
    assert_allclose(report.weights, w)
    assert report.to_dict()["n_estimators"] == 8
    assert 1 <= report.distinct_argmax <= 8
    assert len(top_fraction(report.max_weight)) == 5
    assert report.mean_leaf_nodes == pytest.approx(report.mean_internal_nodes + 1)
