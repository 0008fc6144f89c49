import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newsforge import DataError
from newsforge.ingest import fit_scaling
from newsforge.models import model_to_json
from newsforge.models.mlp import MlpModel, MlpParams, Network, fit_mlp, init_network, loss_gradient, train_network

FAST = MlpParams(candidates_to_train=6, candidates_to_retain=3, cycles=60)


def half_sse(net, X, y):
    r = net.forward(X) - y
    return 0.5 * float(np.sum(r * r))


def numeric_gradient(net, X, y, step=1e-5):
    grads = []
    for name in ("W1", "b1", "w2"):
        arr = getattr(net, name)
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + step
            up = half_sse(net, X, y)
            arr[idx] = old - step
            down = half_sse(net, X, y)
            arr[idx] = old
            g[idx] = (up - down) / (2 * step)
        grads.append(g)
    b2 = net.b2
    net.b2 = b2 + step
    up = half_sse(net, X, y)
    net.b2 = b2 - step
    down = half_sse(net, X, y)
    net.b2 = b2
    grads.append((up - down) / (2 * step))
    return grads


def test_gradient_matches_finite_differences_at_20_points():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        p, h, n = int(rng.integers(1, 5)), int(rng.integers(1, 8)), int(rng.integers(3, 15))
        net = init_network(p, h, rng, 1.0)
        X, y = rng.uniform(size=(n, p)), rng.uniform(size=n)
        for a, b in zip(loss_gradient(net, X, y), numeric_gradient(net, X, y)):
            a, b = np.atleast_1d(a), np.atleast_1d(b)
            rel = np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
            worst = max(worst, float(rel.max()))
    assert worst < 1e-4


def test_zero_point_has_zero_gradient():
    net = Network(np.zeros((2, 3)), np.zeros(3), np.zeros(3), 0.0)
    for g in loss_gradient(net, np.zeros((4, 2)), np.zeros(4)):
        assert np.all(np.asarray(g) == 0)


def test_duplicated_row_doubles_its_contribution():
    rng = np.random.default_rng(1)
    net = init_network(3, 4, rng)
    x, y = rng.uniform(size=(1, 3)), rng.uniform(size=1)
    single = loss_gradient(net, x, y)
    double = loss_gradient(net, np.vstack([x, x]), np.concatenate([y, y]))
    for a, b in zip(single, double):
        np.testing.assert_allclose(np.asarray(b), 2 * np.asarray(a), rtol=1e-15, atol=0)


def test_shape_mismatch():
    net = init_network(3, 2, np.random.default_rng(0))
    with pytest.raises(DataError):
        loss_gradient(net, np.zeros((4, 2)), np.zeros(4))


def test_small_step_moves_weights_by_minus_lr_times_mean_gradient():
    rng = np.random.default_rng(2)
    # input-layer weights start at 0 so their step is read off without cancellation
    net = Network(np.zeros((3, 5)), np.zeros(5), rng.uniform(-0.5, 0.5, 5), 0.2)
    X, y = rng.uniform(size=(10, 3)), rng.uniform(size=10)
    lr = 1e-6
    stepped, _ = train_network(net, X, y, lr, 0.0, 1)
    gW1, gb1, gw2, gb2 = loss_gradient(net, X, y)
    np.testing.assert_allclose(stepped.W1, -lr * gW1 / 10, rtol=1e-9, atol=0)
    np.testing.assert_allclose(stepped.b1, -lr * gb1 / 10, rtol=1e-9, atol=0)
    # a 1e-10 step on O(1) weights is below their rounding, so compare the sums
    np.testing.assert_allclose(stepped.w2, net.w2 - lr * gw2 / 10, rtol=1e-15, atol=0)
    assert stepped.b2 == pytest.approx(net.b2 - lr * gb2 / 10, rel=1e-15)


def test_constant_target_learned():
    rng = np.random.default_rng(3)
    X = rng.uniform(size=(40, 2))
    model = fit_mlp(X, np.full(40, 250.0), FAST, 0)
    np.testing.assert_allclose(model.predict(rng.uniform(size=(5, 2))), 250.0, rtol=0.01)


def test_fixed_seed_is_byte_deterministic():
    rng = np.random.default_rng(4)
    X, y = rng.uniform(size=(30, 3)), rng.uniform(size=30)
    assert model_to_json(fit_mlp(X, y, FAST, 5)) == model_to_json(fit_mlp(X.copy(), y.copy(), FAST, 5))


def test_loss_trace_ends_below_start_and_retained_are_the_best():
    rng = np.random.default_rng(5)
    X = rng.uniform(size=(50, 3))
    y = np.sin(3 * X[:, 0]) + X[:, 1]
    model = fit_mlp(X, y, MlpParams(), 1)
    assert len(model.loss_trace) == 200
    assert model.loss_trace[-1] <= model.loss_trace[0]
    assert list(model.validation_sse) == sorted(model.candidate_validation_sse)[:5]
    assert len(model.networks) == 1
    ens = fit_mlp(X, y, MlpParams(ensemble=True), 1)
    assert len(ens.networks) == 5


def test_first_candidate_uses_configured_hidden_size():
    rng = np.random.default_rng(6)
    X, y = rng.uniform(size=(20, 2)), rng.uniform(size=20)
    model = fit_mlp(X, y, MlpParams(candidates_to_train=1, candidates_to_retain=1, cycles=5), 0)
    assert model.networks[0].W1.shape == (2, 4)


def test_forward_examples():
    xs = fit_scaling(np.array([[0.0], [10.0]]), "minmax")
    ys = fit_scaling(np.array([100.0, 300.0]), "minmax")
    zero = MlpModel((Network(np.zeros((1, 2)), np.zeros(2), np.zeros(2), 0.0),), xs, ys, (0.0,))
    assert zero.predict([[3.0], [7.0]]).tolist() == [100.0, 100.0]
    unit = MlpModel((Network(np.ones((1, 1)), np.zeros(1), np.ones(1), 0.0),), xs, ys, (0.0,))
    assert unit.predict([[5.0]])[0] == pytest.approx(100.0 + 200.0 * np.tanh(0.5), rel=1e-15)
    with pytest.raises(DataError):
        unit.predict([[1.0, 2.0]])


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 15))
def test_predictions_continuous(x):
    rng = np.random.default_rng(7)
    xs = fit_scaling(np.array([[0.0], [10.0]]), "minmax")
    ys = fit_scaling(np.array([100.0, 300.0]), "minmax")
    model = MlpModel((init_network(1, 6, rng, 2.0),), xs, ys, (0.0,))
    assert abs(model.predict([[x + 1e-6]])[0] - model.predict([[x]])[0]) < 1e-3


def test_params_validated():
    with pytest.raises(ValueError):
        MlpParams(hidden_units=14)
    with pytest.raises(ValueError):
        MlpParams(learning_rate=0.0)
    with pytest.raises(DataError):
        fit_mlp(np.zeros((2, 1)), np.zeros(2))
