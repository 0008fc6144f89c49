import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newsforge import DataError
from newsforge.evaluation import mape
from newsforge.models import model_from_json, model_to_json
from newsforge.models.gmdh import GmdhParams, design, fit_descriptor, fit_gmdh, gcv


def test_descriptor_recovers_linear_plane():
    rng = np.random.default_rng(0)
    u, v = rng.normal(size=8), rng.normal(size=8)
    np.testing.assert_allclose(fit_descriptor(u, v, 1 + 2 * u + 3 * v), [1, 2, 3, 0, 0, 0], atol=1e-8)


def test_descriptor_recovers_product_on_grid():
    u, v = np.meshgrid([-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0])
    u, v = u.ravel(), v.ravel()
    np.testing.assert_allclose(fit_descriptor(u, v, u * v), [0, 0, 0, 1, 0, 0], atol=1e-8)


def test_descriptor_singular_design_matches_pinv_residual():
    rng = np.random.default_rng(1)
    u = rng.normal(size=12)
    y = 1 + u**2 + 0.1 * rng.normal(size=12)
    coef = fit_descriptor(u, u, y)
    A = design(u, u)
    ref = np.linalg.pinv(A) @ y
    assert np.linalg.norm(coef) <= np.linalg.norm(ref) + 1e-8
    assert abs(np.sum((A @ coef - y) ** 2) - np.sum((A @ ref - y) ** 2)) <= 1e-8


def test_descriptor_needs_six_samples():
    with pytest.raises(DataError):
        fit_descriptor([1, 2, 3], [1, 2, 3], [1, 2, 3])


def test_gcv_examples():
    assert gcv(0.0, 12, 6) == 0.0
    assert gcv(6.0, 12, 6) == 2.0
    with pytest.raises(ValueError):
        gcv(1.0, 6, 6)


def test_product_recovered_in_one_layer():
    rng = np.random.default_rng(2)
    X = rng.uniform(1, 2, size=(50, 2))
    y = X[:, 0] * X[:, 1]
    net = fit_gmdh(X, y)
    assert mape(y, net.predict(X)) < 0.1
    assert len(net.neurons) == 1


def test_cubic_composition_within_three_layers():
    rng = np.random.default_rng(3)
    X = rng.uniform(1, 2, size=(50, 3))
    y = (X[:, 0] ** 2 + X[:, 1]) * X[:, 2]
    net = fit_gmdh(X, y, GmdhParams(max_layers=3))
    assert mape(y, net.predict(X)) < 1.0


def test_single_feature_fallback_is_exact():
    x = np.linspace(-2, 3, 20)[:, None]
    net = fit_gmdh(x, x[:, 0] ** 2)
    np.testing.assert_allclose(net.predict(x), x[:, 0] ** 2, atol=1e-8)


def test_predict_reproduces_fitted_values_and_extrapolates():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 3))
    y = np.sin(X[:, 0]) + X[:, 1] * X[:, 2]
    net = fit_gmdh(X, y)
    assert np.array_equal(net.predict(X), net.fitted)
    assert np.array_equal(net.predict(X[:1]), net.predict(X[:1].copy()))
    assert np.all(np.isfinite(net.predict(X * 5)))
    with pytest.raises(DataError):
        net.predict(X[:, :2])


def test_determinism_and_serialization():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(60, 4))
    y = X[:, 0] ** 2 + X[:, 1] * X[:, 3]
    a, b = fit_gmdh(X, y), fit_gmdh(X.copy(), y.copy())
    assert model_to_json(a) == model_to_json(b)
    back = model_from_json(model_to_json(a))
    np.testing.assert_array_equal(back.predict(X), a.predict(X))
    assert json.loads(model_to_json(a))["model"] == "gmdh"


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_layer_scores_sorted_and_best_nonincreasing(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 4))
    y = X[:, 0] * X[:, 1] + np.abs(X[:, 2]) + 0.1 * rng.normal(size=40)
    net = fit_gmdh(X, y, GmdhParams(refine=False))
    for scores in net.layer_gcv:
        assert list(scores) == sorted(scores)
        assert all(s >= 0 for s in scores)
    bests = [s[0] for s in net.layer_gcv]
    assert all(a >= b for a, b in zip(bests, bests[1:]))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.integers(0, 10_000))
def test_quadratic_generator_fit_exactly_in_first_layer(coef, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(30, 2))
    y = design(X[:, 0], X[:, 1]) @ np.array(coef)
    if np.ptp(y) < 1e-6:
        return
    net = fit_gmdh(X, y, GmdhParams(max_layers=1, refine=False))
    # GCV of the layer-1 best, mapped back to the SSE it penalizes
    n, k = 30, 6
    sse = net.layer_gcv[0][0] * n * (1 - k / n) ** 2
    assert sse < 1e-12 * n
