import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shaped_es.params import (Adam, NetShape, ShapeError, backward, flatten, forward, init_net, mse_loss_and_grad,
                              sgd_step, unflatten, zeros_net)


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_num_params_matches_flat_length():
    shape = NetShape.mlp(4, (20, 20), 2)
    assert shape.num_params == 4 * 20 + 20 + 20 * 20 + 20 + 20 * 2 + 2
    net = init_net(shape, np.random.default_rng(0))
    assert flatten(net).size == shape.num_params


def test_flatten_layout_is_weight_then_bias_per_layer():
    shape = NetShape.mlp(2, (3,), 1)
    vec = np.arange(shape.num_params, dtype=float)
    net = unflatten(shape, vec)
    np.testing.assert_array_equal(net.weights[0], np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(net.biases[0], [6.0, 7.0, 8.0])
    np.testing.assert_array_equal(net.weights[1], [[9.0], [10.0], [11.0]])
    np.testing.assert_array_equal(net.biases[1], [12.0])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_flatten_unflatten_roundtrip(seed):
    shape = NetShape.mlp(3, (5, 4), 2)
    vec = np.random.default_rng(seed).standard_normal(shape.num_params)
    np.testing.assert_array_equal(flatten(unflatten(shape, vec)), vec)


def test_unflatten_rejects_wrong_length():
    shape = NetShape.mlp(3, (4,), 2)
    with pytest.raises(ShapeError):
        unflatten(shape, np.zeros(shape.num_params + 1))


def test_forward_matches_hand_computation():
    shape = NetShape.mlp(2, (2,), 1)
    net = unflatten(shape, np.array([1.0, -1.0, 2.0, 0.5, 0.0, -1.0, 3.0, 1.0, 0.25]))
    x = np.array([1.0, 2.0])
    hidden = np.maximum(x @ np.array([[1.0, -1.0], [2.0, 0.5]]) + [0.0, -1.0], 0.0)
    assert forward(net, x)[0] == pytest.approx(hidden @ [3.0, 1.0] + 0.25)


def test_forward_batch_equals_rowwise():
    shape = NetShape.mlp(3, (6,), 2)
    net = init_net(shape, np.random.default_rng(1))
    xs = np.random.default_rng(2).standard_normal((5, 3))
    batch = forward(net, xs)
    for i in range(5):
        np.testing.assert_allclose(batch[i], forward(net, xs[i]), rtol=1e-14, atol=1e-14)


def test_forward_rejects_bad_input():
    net = zeros_net(NetShape.mlp(3, (4,), 2))
    with pytest.raises(ShapeError):
        forward(net, np.zeros(4))
    with pytest.raises(ValueError):
        forward(net, np.array([0.0, np.nan, 1.0]))


def test_net_arrays_are_read_only():
    net = init_net(NetShape.mlp(2, (3,), 1), np.random.default_rng(0))
    with pytest.raises(ValueError):
        net.weights[0][0, 0] = 1.0


@pytest.mark.parametrize("hidden", [(20, 20), (20, 20, 20)])
def test_backward_matches_central_differences(hidden):
    rng = np.random.default_rng(3)
    shape = NetShape.mlp(5, hidden, 3)
    theta = rng.standard_normal(shape.num_params) * 0.5
    x = rng.standard_normal((4, 5))
    g_out = rng.standard_normal((4, 3))

    def f(v):
        return float(np.sum(forward(unflatten(shape, v), x) * g_out))

    analytic = backward(unflatten(shape, theta), x, g_out)
    numeric = numeric_grad(f, theta)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-6)


def test_mse_grad_matches_central_differences():
    rng = np.random.default_rng(4)
    shape = NetShape.mlp(3, (7,), 2)
    theta = rng.standard_normal(shape.num_params)
    x, y = rng.standard_normal((6, 3)), rng.standard_normal((6, 2))
    loss, grad = mse_loss_and_grad(unflatten(shape, theta), x, y)
    assert loss == pytest.approx(np.sum((forward(unflatten(shape, theta), x) - y) ** 2) / 6)
    numeric = numeric_grad(lambda v: mse_loss_and_grad(unflatten(shape, v), x, y)[0], theta)
    np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-7)


def test_sgd_step_and_validation():
    np.testing.assert_array_equal(sgd_step(np.ones(3), np.array([1.0, 2.0, 3.0]), 0.5), [0.5, 0.0, -0.5])
    with pytest.raises(ShapeError):
        sgd_step(np.ones(3), np.ones(2), 0.1)
    with pytest.raises(ValueError):
        sgd_step(np.ones(3), np.ones(3), -1.0)


def test_adam_first_step_moves_each_coordinate_by_lr():
    opt = Adam(3, lr=0.1)
    out = opt.step(np.zeros(3), np.array([2.0, -0.5, 1e-3]))
    np.testing.assert_allclose(out, [-0.1, 0.1, -0.1], rtol=1e-4)


def test_adam_minimises_quadratic():
    opt = Adam(2, lr=0.05)
    p = np.array([3.0, -2.0])
    for _ in range(2000):
        p = opt.step(p, 2 * p)
    assert np.linalg.norm(p) < 1e-3
